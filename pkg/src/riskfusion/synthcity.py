"""Seeded synthetic city with a planted accident-risk rule.

Every cell draws three latent traits uniformly on [0, 1]:

* ``tau``: traffic intensity, visible only through the taxi GPS trips,
* ``kappa``: road complexity, visible through the OSM street grid and (weakly)
  the CNN vectors,
* ``nu``: visual clutter, visible only through the tiles and CNN vectors.

The expected accident count of a cell is
``base * sigmoid(a (tau - .5) + b (kappa - .5) + c (nu - .5) + eta * N(0, 1))``
and the realised count is its stochastic rounding.  Each cell and each data
source gets its own counter-based random stream, so output is identical
regardless of generation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw

from .geogrid import KM_PER_DEG, BoundingBox, RegionGrid, cell_bounds, make_grid
from .ingest import D_CNN, D_POI
from .labeling import kmeans_levels

DAY0 = 1_499_990_400  # a UTC midnight
HIGHWAYS = ("residential", "service", "tertiary", "secondary", "primary", "footway", "trunk")
FILES = {"gps": "gps.csv", "poi": "poi.csv", "osm": "map.osm", "tiles": "tiles",
         "cnn": "cnn.csv", "accidents": "accidents.csv", "latent": "latent.csv",
         "meta": "city.json"}

# stream ids for per-cell substreams
_TRAITS, _GPS, _POI, _OSM, _TILE, _CNN, _ACC, _NOISE = range(8)


@dataclass(frozen=True)
class SynthSpec:
    rows: int = 40
    cols: int = 50
    seed: int = 42
    eta: float = 0.1
    a: float = 8.0
    b: float = 3.0
    c: float = 6.0
    base_rate: float = 30.0
    trip_rate: float = 60.0
    tile_px: int = 256
    lat0: float = 31.0
    lon0: float = 121.0
    cnn_dim: int = D_CNN
    cnn_noise: float = 0.05

    def __post_init__(self):
        if self.rows * self.cols < 100:
            raise ValueError(f"synthetic city needs at least 100 cells, got {self.rows * self.cols}")
        if not 0.0 <= self.eta < 0.5:
            raise ValueError(f"noise level eta must lie in [0, 0.5), got {self.eta}")
        if self.tile_px < 256:
            raise ValueError("tiles must be at least 256 px")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    def grid(self) -> RegionGrid:
        dlat = 1.0 / KM_PER_DEG
        mid = self.lat0 + 0.5 * self.rows * dlat
        dlon = 1.0 / (KM_PER_DEG * math.cos(math.radians(mid)))
        bbox = BoundingBox(self.lat0, self.lat0 + self.rows * dlat,
                           self.lon0, self.lon0 + self.cols * dlon)
        return make_grid(bbox, rows=self.rows, cols=self.cols)


@dataclass
class SynthCity:
    spec: SynthSpec
    grid: RegionGrid
    traits: np.ndarray  # (n_cells, 3): tau, kappa, nu
    rate: np.ndarray  # expected accident count per cell
    counts: np.ndarray  # realised accident count per cell
    paths: dict[str, Path] = field(default_factory=dict)


def _rng(spec: SynthSpec, stream: int, cell: int = 0) -> np.random.Generator:
    return np.random.default_rng([spec.seed, stream, cell])


def _stochastic_round(x: float, rng: np.random.Generator) -> int:
    lo = math.floor(x)
    return lo + int(rng.random() < x - lo)


def sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def latent_traits(spec: SynthSpec) -> np.ndarray:
    return np.array([_rng(spec, _TRAITS, i).random(3) for i in range(spec.n_cells)])


def expected_rate(spec: SynthSpec, traits: np.ndarray) -> np.ndarray:
    noise = np.array([_rng(spec, _NOISE, i).standard_normal() for i in range(spec.n_cells)])
    z = (spec.a * (traits[:, 0] - 0.5) + spec.b * (traits[:, 1] - 0.5)
         + spec.c * (traits[:, 2] - 0.5) + spec.eta * noise)
    return spec.base_rate * sigmoid(z)


def _inside(grid: RegionGrid, cell: int, rng: np.random.Generator, n: int = 1,
            margin: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    b = cell_bounds(grid, grid.cell_at(cell))
    u = rng.uniform(margin, 1.0 - margin, size=(2, n))
    return (b.lat_min + u[0] * (b.lat_max - b.lat_min),
            b.lon_min + u[1] * (b.lon_max - b.lon_min))


def _neighbours(grid: RegionGrid, cell: int) -> list[int]:
    r, c = grid.cell_at(cell)
    out = []
    for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        if 0 <= r + dr < grid.rows and 0 <= c + dc < grid.cols:
            out.append((r + dr) * grid.cols + c + dc)
    return out


# diurnal profile: quiet nights, morning and evening peaks
_HOUR_W = np.array([1, 1, 1, 1, 1, 2, 4, 8, 9, 6, 5, 5, 5, 5, 5, 6, 7, 9, 8, 5, 4, 3, 2, 1],
                   dtype=np.float64)
_HOUR_P = _HOUR_W / _HOUR_W.sum()


def _gps_lines(spec: SynthSpec, grid: RegionGrid, traits: np.ndarray) -> list[str]:
    """Short hops out of each cell into a random neighbour at a rate proportional
    to ``tau``; each hop is one taxi visit of two fixes five minutes apart.

    A cell's outflow therefore tracks its own ``tau``, while its inflow mixes
    the neighbours' traffic.
    """
    lines = []
    for i in range(spec.n_cells):
        rng = _rng(spec, _GPS, i)
        nbrs = _neighbours(grid, i)
        n = _stochastic_round(spec.trip_rate * traits[i, 0], rng)
        hours = rng.choice(24, size=n, p=_HOUR_P)
        secs = rng.integers(0, 3600 - 300, size=n)
        for k in range(n):
            lat0, lon0 = _inside(grid, i, rng)
            lat1, lon1 = _inside(grid, nbrs[rng.integers(len(nbrs))], rng)
            t = DAY0 + int(hours[k]) * 3600 + int(secs[k])
            lines.append(f"c{i}t{k},{t},{lat0[0]:.7f},{lon0[0]:.7f}")
            lines.append(f"c{i}t{k},{t + 300},{lat1[0]:.7f},{lon1[0]:.7f}")
    return lines


def _poi_lines(spec: SynthSpec, grid: RegionGrid) -> list[str]:
    """Label-independent background POIs."""
    lines = []
    for i in range(spec.n_cells):
        rng = _rng(spec, _POI, i)
        n = int(rng.poisson(8))
        lat, lon = _inside(grid, i, rng, n)
        cats = rng.integers(0, D_POI, size=n)
        lines += [f"{la:.7f},{lo:.7f},{k}" for la, lo, k in zip(lat, lon, cats)]
    return lines


def _osm_xml(spec: SynthSpec, grid: RegionGrid, traits: np.ndarray) -> str:
    """Per-cell street lattice; the number of streets each way grows with ``kappa``.

    Horizontal and vertical streets cross at degree-4 nodes; street ends are
    degree-1 nodes; a third of the vertical streets stop at the first
    horizontal street, which makes a degree-3 T junction.
    """
    nodes: list[str] = []
    ways: list[str] = []
    next_node, next_way = 1, 1

    def node(lat, lon):
        nonlocal next_node
        nodes.append(f'  <node id="{next_node}" lat="{lat:.7f}" lon="{lon:.7f}"/>')
        next_node += 1
        return next_node - 1

    def way(refs, highway):
        nonlocal next_way
        nds = "".join(f'<nd ref="{r}"/>' for r in refs)
        ways.append(f'  <way id="{next_way}">{nds}<tag k="highway" v="{highway}"/></way>')
        next_way += 1

    for i in range(spec.n_cells):
        rng = _rng(spec, _OSM, i)
        b = cell_bounds(grid, grid.cell_at(i))
        h = 1 + _stochastic_round(6.0 * traits[i, 1], rng)
        v = 1 + _stochastic_round(6.0 * traits[i, 1], rng)
        fy = (np.arange(h) + 0.5) / h
        fx = (np.arange(v) + 0.5) / v
        lat = b.lat_min + (0.04 + 0.92 * fy) * (b.lat_max - b.lat_min)
        lon = b.lon_min + (0.04 + 0.92 * fx) * (b.lon_max - b.lon_min)
        south = b.lat_min + 0.02 * (b.lat_max - b.lat_min)
        north = b.lat_min + 0.98 * (b.lat_max - b.lat_min)
        west = b.lon_min + 0.02 * (b.lon_max - b.lon_min)
        east = b.lon_min + 0.98 * (b.lon_max - b.lon_min)
        cross = [[node(la, lo) for lo in lon] for la in lat]
        for r in range(h):
            way([node(lat[r], west), *cross[r], node(lat[r], east)],
                HIGHWAYS[rng.integers(len(HIGHWAYS))])
        for c in range(v):
            column = [cross[r][c] for r in range(h)]
            refs = [node(south, lon[c]), *column]
            if h == 1 or rng.random() >= 1 / 3:
                refs.append(node(north, lon[c]))
            way(refs, HIGHWAYS[rng.integers(len(HIGHWAYS))])
    return "\n".join(['<?xml version="1.0" encoding="UTF-8"?>', '<osm version="0.6">',
                      *nodes, *ways, "</osm>"]) + "\n"


def render_tile(n_segments: int, rng: np.random.Generator, px: int = 256) -> Image.Image:
    """Flat gray background with ``n_segments`` bright line segments."""
    img = Image.new("L", (px, px), 60)
    draw = ImageDraw.Draw(img)
    for _ in range(n_segments):
        x0, y0 = rng.uniform(0, px, size=2)
        angle = rng.uniform(0, math.pi)
        length = rng.uniform(0.2, 0.8) * px
        x1, y1 = x0 + length * math.cos(angle), y0 + length * math.sin(angle)
        draw.line([(float(x0), float(y0)), (float(x1), float(y1))], fill=220, width=2)
    return img


def _cnn_lines(spec: SynthSpec, traits: np.ndarray) -> list[str]:
    proj = _rng(spec, _CNN, spec.n_cells).standard_normal((spec.cnn_dim, 2))
    lines = []
    for i in range(spec.n_cells):
        rng = _rng(spec, _CNN, i)
        v = proj @ (traits[i, [2, 1]] - 0.5) + spec.cnn_noise * rng.standard_normal(spec.cnn_dim)
        r, c = divmod(i, spec.cols)
        lines.append(f"{r},{c}," + ",".join(f"{x:.6f}" for x in v))
    return lines


def _accident_lines(spec: SynthSpec, grid: RegionGrid, rate: np.ndarray) -> tuple[list[str], np.ndarray]:
    lines, counts = [], np.zeros(spec.n_cells, dtype=np.int64)
    for i in range(spec.n_cells):
        rng = _rng(spec, _ACC, i)
        n = _stochastic_round(float(rate[i]), rng)
        counts[i] = n
        lat, lon = _inside(grid, i, rng, n)
        ts = DAY0 + rng.integers(0, 86400, size=n)
        lines += [f"{la:.7f},{lo:.7f},{t},1" for la, lo, t in zip(lat, lon, ts)]
    return lines, counts


def _write(path: Path, lines: list[str]) -> None:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def generate(spec: SynthSpec, out_dir) -> SynthCity:
    """Write all raw sources for ``spec`` into ``out_dir`` (file names in ``FILES``)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid = spec.grid()
    traits = latent_traits(spec)
    rate = expected_rate(spec, traits)
    paths = {k: out / v for k, v in FILES.items()}

    _write(paths["gps"], _gps_lines(spec, grid, traits))
    _write(paths["poi"], _poi_lines(spec, grid))
    paths["osm"].write_text(_osm_xml(spec, grid, traits), encoding="utf-8")
    paths["tiles"].mkdir(exist_ok=True)
    for i in range(spec.n_cells):
        rng = _rng(spec, _TILE, i)
        n_seg = 2 + _stochastic_round(30.0 * traits[i, 2], rng)
        r, c = divmod(i, spec.cols)
        render_tile(n_seg, rng, spec.tile_px).save(paths["tiles"] / f"{r}_{c}.png", optimize=False)
    _write(paths["cnn"], _cnn_lines(spec, traits))
    acc_lines, counts = _accident_lines(spec, grid, rate)
    _write(paths["accidents"], acc_lines)
    _write(paths["latent"], [
        f"{i // spec.cols},{i % spec.cols},{t[0]:.17g},{t[1]:.17g},{t[2]:.17g},{q:.17g}"
        for i, (t, q) in enumerate(zip(traits, rate))])
    meta = {"spec": asdict(spec), "grid": grid.to_dict()}
    paths["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return SynthCity(spec, grid, traits, rate, counts, paths)


def intended_levels(rate: np.ndarray, seed: int = 0) -> np.ndarray:
    """Risk levels the generator means to plant: clustering of the expected rates."""
    return kmeans_levels(rate, seed=seed)[0]


def planted_labels(city: SynthCity, seed: int = 0) -> np.ndarray:
    """Risk levels of the realised per-cell accident counts (severity 1 each)."""
    return kmeans_levels(city.counts.astype(np.float64), seed=seed)[0]


def agreement(y1, y2) -> float:
    """Fraction of cells with equal labels."""
    y1, y2 = np.asarray(y1), np.asarray(y2)
    if y1.shape != y2.shape:
        raise ValueError(f"label arrays differ in shape: {y1.shape} vs {y2.shape}")
    return float(np.mean(y1 == y2))
