"""Readers for the raw data sources.

CSV inputs carry no header and use a fixed field order:

* GPS: ``taxi_id,timestamp,lat,lon``
* POI: ``lat,lon,category``
* accidents: ``lat,lon,timestamp[,severity]``
* CNN vectors: ``row,col,v1,...,vD``

Malformed lines are skipped and counted in a :class:`ParseStats`; a file
with more than half of its lines malformed raises ``CorruptInputError``
once fully read.
"""

from __future__ import annotations

import logging
import math
import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterator, Mapping

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import CorruptInputError, DataError, DimensionMismatchError, MissingArtifactError
from .geogrid import CellId, RegionGrid

log = logging.getLogger(__name__)

D_POI = 16
D_CNN = 45
MIN_TILE = 256


@dataclass
class ParseStats:
    lines: int = 0
    records: int = 0
    malformed: int = 0
    out_of_range: int = 0

    @property
    def skipped(self) -> int:
        return self.malformed + self.out_of_range


@dataclass(frozen=True)
class GpsPoint:
    taxi_id: str
    timestamp: float
    lat: float
    lon: float


@dataclass(frozen=True)
class PoiRecord:
    lat: float
    lon: float
    category: int


@dataclass(frozen=True)
class AccidentRecord:
    lat: float
    lon: float
    timestamp: float
    severity: float = 1.0


@dataclass
class OsmGraph:
    nodes: dict[int, tuple[float, float]] = field(default_factory=dict)
    ways: dict[int, tuple[tuple[int, ...], str | None]] = field(default_factory=dict)
    dropped_ways: int = 0


@dataclass
class ImageTile:
    cell: CellId
    pixels: np.ndarray


@dataclass
class CnnVector:
    cell: CellId
    values: np.ndarray
    missing: bool = False


def _finite(*vals: float) -> bool:
    return all(math.isfinite(v) for v in vals)


def _read_records(path, parse: Callable[[list[str]], object], stats: ParseStats) -> Iterator:
    path = Path(path)
    with path.open("r", encoding="utf-8", newline="") as fh:
        for raw in fh:
            line = raw.strip()
            if not line:
                continue
            stats.lines += 1
            try:
                rec = parse(line.split(","))
            except (ValueError, IndexError):
                stats.malformed += 1
                continue
            if rec is None:
                stats.out_of_range += 1
                continue
            stats.records += 1
            yield rec
    if stats.lines and stats.skipped * 2 > stats.lines:
        raise CorruptInputError(
            f"{path}: corrupt input ({stats.skipped} of {stats.lines} lines unusable)")


def parse_gps(path, stats: ParseStats | None = None) -> Iterator[GpsPoint]:
    stats = ParseStats() if stats is None else stats

    def parse(f):
        if len(f) != 4 or not f[0]:
            raise ValueError
        t, lat, lon = float(f[1]), float(f[2]), float(f[3])
        if not _finite(t, lat, lon) or t < 0:
            raise ValueError
        return GpsPoint(f[0], t, lat, lon)

    return _read_records(path, parse, stats)


def parse_poi(path, stats: ParseStats | None = None, n_categories: int = D_POI,
              vocabulary: Mapping[str, int] | None = None) -> Iterator[PoiRecord]:
    """POI records; ``vocabulary`` maps source category strings to indices."""
    stats = ParseStats() if stats is None else stats

    def parse(f):
        if len(f) != 3:
            raise ValueError
        lat, lon = float(f[0]), float(f[1])
        if not _finite(lat, lon):
            raise ValueError
        token = f[2].strip()
        if vocabulary is not None and token in vocabulary:
            cat = int(vocabulary[token])
        else:
            cat = int(token)
        if not 0 <= cat < n_categories:
            return None
        return PoiRecord(lat, lon, cat)

    return _read_records(path, parse, stats)


def parse_accidents(path, stats: ParseStats | None = None) -> Iterator[AccidentRecord]:
    stats = ParseStats() if stats is None else stats

    def parse(f):
        if len(f) not in (3, 4):
            raise ValueError
        lat, lon, t = float(f[0]), float(f[1]), float(f[2])
        sev = float(f[3]) if len(f) == 4 and f[3].strip() else 1.0
        if not _finite(lat, lon, t, sev) or sev <= 0:
            raise ValueError
        return AccidentRecord(lat, lon, t, sev)

    return _read_records(path, parse, stats)


def parse_osm(path) -> OsmGraph:
    """Read ``node``/``way`` elements of an OSM XML file; relations are ignored.

    Ways referencing unknown nodes or with fewer than two nodes are dropped
    and counted in ``OsmGraph.dropped_ways``.
    """
    graph = OsmGraph()
    pending: list[tuple[int, tuple[int, ...], str | None]] = []
    try:
        for _, elem in ET.iterparse(str(path), events=("end",)):
            if elem.tag == "node":
                try:
                    nid = int(elem.attrib["id"])
                    lat, lon = float(elem.attrib["lat"]), float(elem.attrib["lon"])
                except (KeyError, ValueError):
                    log.warning("%s: skipping node without valid id/lat/lon", path)
                else:
                    graph.nodes[nid] = (lat, lon)
                elem.clear()
            elif elem.tag == "way":
                try:
                    wid = int(elem.attrib["id"])
                    refs = tuple(int(nd.attrib["ref"]) for nd in elem.iter("nd"))
                except (KeyError, ValueError):
                    graph.dropped_ways += 1
                else:
                    highway = None
                    for tag in elem.iter("tag"):
                        if tag.attrib.get("k") == "highway":
                            highway = tag.attrib.get("v")
                    pending.append((wid, refs, highway))
                elem.clear()
            elif elem.tag == "relation":
                elem.clear()
    except ET.ParseError as exc:
        line = exc.position[0] if exc.position else "?"
        raise DataError(f"{path}: XML syntax error at line {line}: {exc}") from exc
    for wid, refs, highway in pending:
        if len(refs) < 2 or any(r not in graph.nodes for r in refs):
            graph.dropped_ways += 1
            continue
        graph.ways[wid] = (refs, highway)
    if graph.dropped_ways:
        log.warning("%s: dropped %d ways with dangling or too few node references",
                    path, graph.dropped_ways)
    return graph


def to_grayscale(img: Image.Image) -> np.ndarray:
    """Intensities in [0, 1]; colour images use luminance 0.299R + 0.587G + 0.114B."""
    if img.mode in ("I;16", "I;16B", "I;16L", "I"):
        arr = np.asarray(img, dtype=np.float64)
        return np.clip(arr / 65535.0, 0.0, 1.0)
    if img.mode == "L":
        return np.asarray(img, dtype=np.float64) / 255.0
    rgb = np.asarray(img.convert("RGB"), dtype=np.float64)
    return (0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]) / 255.0


def read_tile(path) -> np.ndarray:
    with Image.open(path) as img:
        img.load()
        return to_grayscale(img)


_TILE_NAME = re.compile(r"^(\d+)_(\d+)\.png$", re.IGNORECASE)


class TileStore(Mapping):
    """Lazy ``CellId -> ImageTile`` map over a directory of ``row_col.png`` files.

    Files are validated once at construction (decodable, inside the grid,
    at least 256 x 256) and decoded again on each access.
    """

    def __init__(self, paths: dict[CellId, Path]):
        self._paths = dict(sorted(paths.items()))

    def __getitem__(self, cell) -> ImageTile:
        cell = CellId(*cell)
        return ImageTile(cell, read_tile(self._paths[cell]))

    def __iter__(self):
        return iter(self._paths)

    def __len__(self) -> int:
        return len(self._paths)

    def path(self, cell: CellId) -> Path:
        return self._paths[cell]


def load_tiles(directory, grid: RegionGrid) -> TileStore:
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingArtifactError("synth", directory)
    found: dict[CellId, Path] = {}
    for p in sorted(directory.iterdir()):
        m = _TILE_NAME.match(p.name)
        if not m:
            continue
        cell = CellId(int(m.group(1)), int(m.group(2)))
        if not (cell.row < grid.rows and cell.col < grid.cols):
            log.warning("%s: tile outside the grid, skipped", p)
            continue
        try:
            with Image.open(p) as img:
                img.load()
                w, h = img.size
        except (UnidentifiedImageError, OSError) as exc:
            log.warning("%s: undecodable image skipped (%s)", p, exc)
            continue
        if min(w, h) < MIN_TILE:
            log.warning("%s: %dx%d tile smaller than %d px, skipped", p, w, h, MIN_TILE)
            continue
        found[cell] = p
    return TileStore(found)


def load_cnn_vectors(path, grid: RegionGrid, dim: int = D_CNN,
                     enabled: bool = True) -> dict[CellId, CnnVector]:
    """Per-cell CNN vectors for every grid cell.

    Cells without a record get a zero vector flagged ``missing``; with
    ``enabled=False`` the file is not read at all.
    """
    out: dict[CellId, CnnVector] = {}
    if enabled:
        path = Path(path) if path is not None else None
        if path is None or not path.is_file():
            raise MissingArtifactError("synth", path)
        with path.open("r", encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line:
                    continue
                fields = line.split(",")
                if len(fields) - 2 != dim:
                    raise DimensionMismatchError(
                        f"{path}:{lineno}: dimension mismatch: expected {dim} values, "
                        f"got {len(fields) - 2}")
                try:
                    cell = CellId(int(fields[0]), int(fields[1]))
                    values = np.array([float(v) for v in fields[2:]])
                except ValueError as exc:
                    raise DataError(f"{path}:{lineno}: malformed CNN record") from exc
                if not (0 <= cell.row < grid.rows and 0 <= cell.col < grid.cols):
                    log.warning("%s:%d: cell outside grid skipped", path, lineno)
                    continue
                out[cell] = CnnVector(cell, values)
    for cell in grid.cells():
        if cell not in out:
            out[cell] = CnnVector(cell, np.zeros(dim), missing=True)
    return dict(sorted(out.items()))
