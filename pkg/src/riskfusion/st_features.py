"""Spatio-temporal feature blocks per grid cell.

Each block function returns a dense ``(n_cells, D)`` float array whose row
``i`` belongs to the cell with linear index ``i`` (row-major); cells with no
data keep all-zero rows.
"""

from __future__ import annotations

import logging
from collections import Counter
from typing import Iterable

import numpy as np

from .errors import DimensionMismatchError
from .geogrid import RegionGrid, locate_many
from .ingest import GpsPoint, OsmGraph, PoiRecord

log = logging.getLogger(__name__)

D_TRA, D_POI, D_CON, D_WID = 48, 16, 3, 4
HOURS = 24
MAX_GAP_S = 600.0

BLOCK_NAMES = ("tra", "poi", "con", "wid")

# highway tag -> width level (1 narrowest .. 4 widest)
WIDTH_LEVELS = {
    **dict.fromkeys(("track", "living_street", "crossing", "footway", "path", "pedestrian"), 1),
    **dict.fromkeys(("service", "residential", "motorway_junction", "unclassified"), 2),
    **dict.fromkeys(("secondary", "primary", "primary_link", "secondary_link", "tertiary",
                     "tertiary_link"), 3),
    **dict.fromkeys(("motorway", "trunk", "motorway_link", "trunk_link"), 4),
}
UNKNOWN_WIDTH_LEVEL = 2


def traffic_patterns(points: Iterable[GpsPoint], grid: RegionGrid,
                     max_gap_s: float = MAX_GAP_S,
                     time_range: tuple[float, float] | None = None) -> np.ndarray:
    """Hourly inflow/outflow counts ``[I_1..I_24, O_1..O_24]`` per cell.

    Each taxi's points are sorted by time.  A consecutive pair (p, q) that
    changes cell adds one outflow to p's cell and one inflow to q's cell, in
    the hour-of-day (UTC) bucket of q.  Pairs further apart than
    ``max_gap_s`` are trajectory breaks; pairs touching an outside point
    count nowhere.  ``time_range`` keeps only points with
    ``start <= timestamp < end``.
    """
    ids: dict[str, int] = {}
    taxi, ts, lat, lon = [], [], [], []
    for p in points:
        if time_range is not None and not time_range[0] <= p.timestamp < time_range[1]:
            continue
        taxi.append(ids.setdefault(p.taxi_id, len(ids)))
        ts.append(p.timestamp)
        lat.append(p.lat)
        lon.append(p.lon)
    out = np.zeros((grid.n_cells, D_TRA))
    if len(ts) < 2:
        return out
    taxi_a, ts_a = np.asarray(taxi), np.asarray(ts, dtype=np.float64)
    order = np.lexsort((ts_a, taxi_a))
    taxi_a, ts_a = taxi_a[order], ts_a[order]
    cell = locate_many(grid, np.asarray(lat)[order], np.asarray(lon)[order])
    src, dst = cell[:-1], cell[1:]
    keep = ((taxi_a[:-1] == taxi_a[1:]) & (ts_a[1:] - ts_a[:-1] <= max_gap_s)
            & (src >= 0) & (dst >= 0) & (src != dst))
    hour = (np.floor(ts_a[1:][keep] / 3600.0).astype(np.int64)) % HOURS
    np.add.at(out, (dst[keep], hour), 1.0)
    np.add.at(out, (src[keep], HOURS + hour), 1.0)
    return out


def poi_bow(pois: Iterable[PoiRecord], grid: RegionGrid, n_categories: int = D_POI) -> np.ndarray:
    """Count of POIs per category inside each cell."""
    lat, lon, cat = [], [], []
    for p in pois:
        lat.append(p.lat)
        lon.append(p.lon)
        cat.append(p.category)
    out = np.zeros((grid.n_cells, n_categories))
    if not cat:
        return out
    cells = locate_many(grid, lat, lon)
    cat_a = np.asarray(cat, dtype=np.int64)
    inside = cells >= 0
    np.add.at(out, (cells[inside], cat_a[inside]), 1.0)
    return out


def node_degrees(osm: OsmGraph) -> dict[int, int]:
    """Number of distinct neighbours of every node that appears in some way."""
    neighbours: dict[int, set[int]] = {}
    for refs, _ in osm.ways.values():
        for a, b in zip(refs[:-1], refs[1:]):
            if a == b:
                continue
            neighbours.setdefault(a, set()).add(b)
            neighbours.setdefault(b, set()).add(a)
        for r in refs:
            neighbours.setdefault(r, set())
    return {n: len(s) for n, s in neighbours.items()}


def connectivity_level(degree: int) -> int:
    """Column in ``(high, med, low)``: >= 4 high, 3 medium, <= 2 low."""
    if degree >= 4:
        return 0
    if degree == 3:
        return 1
    return 2


def node_connectivity(osm: OsmGraph, grid: RegionGrid) -> np.ndarray:
    """``(CON_high, CON_med, CON_low)`` node counts per cell."""
    out = np.zeros((grid.n_cells, D_CON))
    deg = node_degrees(osm)
    if not deg:
        return out
    nodes = sorted(deg)
    lat = [osm.nodes[n][0] for n in nodes]
    lon = [osm.nodes[n][1] for n in nodes]
    cells = locate_many(grid, lat, lon)
    levels = np.array([connectivity_level(deg[n]) for n in nodes], dtype=np.int64)
    inside = cells >= 0
    np.add.at(out, (cells[inside], levels[inside]), 1.0)
    return out


def width_level(highway: str) -> int:
    return WIDTH_LEVELS.get(highway, UNKNOWN_WIDTH_LEVEL)


def road_width(osm: OsmGraph, grid: RegionGrid) -> np.ndarray:
    """``(WID_1..WID_4)``: per cell, number of highway ways of each width level
    with at least one node inside the cell."""
    out = np.zeros((grid.n_cells, D_WID))
    unknown: Counter[str] = Counter()
    for wid in sorted(osm.ways):
        refs, highway = osm.ways[wid]
        if highway is None:
            continue
        if highway not in WIDTH_LEVELS:
            unknown[highway] += 1
        level = width_level(highway)
        cells = locate_many(grid, [osm.nodes[r][0] for r in refs], [osm.nodes[r][1] for r in refs])
        for c in np.unique(cells[cells >= 0]):
            out[c, level - 1] += 1.0
    if unknown:
        log.warning("unknown highway tags mapped to level %d: %s", UNKNOWN_WIDTH_LEVEL,
                    dict(sorted(unknown.items())))
    return out


def assemble_xu(tra: np.ndarray, poi: np.ndarray, con: np.ndarray, wid: np.ndarray,
                dims: tuple[int, int, int, int] = (D_TRA, D_POI, D_CON, D_WID)) -> np.ndarray:
    """Concatenate the four blocks in ``[tra, poi, con, wid]`` order."""
    blocks = (tra, poi, con, wid)
    n = blocks[0].shape[0]
    for name, block, d in zip(BLOCK_NAMES, blocks, dims):
        if block.ndim != 2 or block.shape != (n, d):
            raise DimensionMismatchError(
                f"block {name}: expected shape ({n}, {d}), got {block.shape}")
    return np.concatenate(blocks, axis=1)


def split_xu(xu: np.ndarray, dims: tuple[int, int, int, int] = (D_TRA, D_POI, D_CON, D_WID)):
    bounds = np.cumsum(dims)[:-1]
    return tuple(np.split(xu, bounds, axis=-1))
