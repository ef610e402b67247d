"""City tessellation into square kilometre cells.

Distances use an equirectangular approximation at the box's mid-latitude
(111.32 km per degree).  Cells are half-open ``[south, north) x [west, east)``
except along the bbox's north and east edges, which are closed, so every
point of the bbox maps to exactly one cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

KM_PER_DEG = 111.32


@dataclass(frozen=True)
class BoundingBox:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        vals = (self.lat_min, self.lat_max, self.lon_min, self.lon_max)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite bounding box {vals}")
        if not (-90.0 <= self.lat_min <= 90.0 and -90.0 <= self.lat_max <= 90.0):
            raise ValueError("latitudes must lie in [-90, 90]")
        if not (-180.0 <= self.lon_min <= 180.0 and -180.0 <= self.lon_max <= 180.0):
            raise ValueError("longitudes must lie in [-180, 180]")
        if self.lat_min >= self.lat_max or self.lon_min >= self.lon_max:
            raise ValueError("empty grid: bounding box has zero or negative extent")

    @property
    def mid_lat(self) -> float:
        return 0.5 * (self.lat_min + self.lat_max)

    def contains(self, lat: float, lon: float) -> bool:
        return self.lat_min <= lat <= self.lat_max and self.lon_min <= lon <= self.lon_max

    def area_deg(self) -> float:
        return (self.lat_max - self.lat_min) * (self.lon_max - self.lon_min)


class CellId(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class RegionGrid:
    bbox: BoundingBox
    rows: int
    cols: int
    cell_dlat: float
    cell_dlon: float
    cell_km: float = 1.0

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def shape(self) -> tuple[int, int]:
        return self.rows, self.cols

    def linear(self, cell: CellId) -> int:
        self._check(cell)
        return cell.row * self.cols + cell.col

    def cell_at(self, linear: int) -> CellId:
        if not 0 <= linear < self.n_cells:
            raise IndexError(f"linear index {linear} outside grid of {self.n_cells} cells")
        return CellId(*divmod(int(linear), self.cols))

    def cells(self):
        """All cells in row-major order."""
        for r in range(self.rows):
            for c in range(self.cols):
                yield CellId(r, c)

    def _check(self, cell: CellId) -> None:
        if not (0 <= cell.row < self.rows and 0 <= cell.col < self.cols):
            raise IndexError(f"cell {tuple(cell)} outside {self.rows}x{self.cols} grid")

    def lat_edge(self, i: int) -> float:
        return self.bbox.lat_max if i >= self.rows else self.bbox.lat_min + i * self.cell_dlat

    def lon_edge(self, j: int) -> float:
        return self.bbox.lon_max if j >= self.cols else self.bbox.lon_min + j * self.cell_dlon

    def to_dict(self) -> dict:
        b = self.bbox
        return {"lat_min": b.lat_min, "lat_max": b.lat_max, "lon_min": b.lon_min,
                "lon_max": b.lon_max, "rows": self.rows, "cols": self.cols,
                "cell_km": self.cell_km}


def make_grid(bbox: BoundingBox, rows: int | None = None, cols: int | None = None,
              cell_km: float = 1.0) -> RegionGrid:
    """Tessellate ``bbox`` into ``cell_km``-sided cells.

    By default the counts are ``ceil(extent_km / cell_km)`` with the last
    row/column clipped at the bbox edge.  Passing ``rows``/``cols`` forces the
    counts instead; cells then divide that axis evenly.
    """
    lat_km = (bbox.lat_max - bbox.lat_min) * KM_PER_DEG
    lon_km = (bbox.lon_max - bbox.lon_min) * KM_PER_DEG * math.cos(math.radians(bbox.mid_lat))
    if rows is None:
        rows = math.ceil(lat_km / cell_km)
        dlat = cell_km / KM_PER_DEG
    else:
        dlat = (bbox.lat_max - bbox.lat_min) / rows
    if cols is None:
        cols = math.ceil(lon_km / cell_km)
        dlon = cell_km / (KM_PER_DEG * math.cos(math.radians(bbox.mid_lat)))
    else:
        dlon = (bbox.lon_max - bbox.lon_min) / cols
    if rows <= 0 or cols <= 0:
        raise ValueError("empty grid")
    return RegionGrid(bbox, int(rows), int(cols), dlat, dlon, cell_km)


def _axis_index(x, lo: float, hi: float, step: float, n: int):
    idx = np.floor((x - lo) / step).astype(np.int64)
    # re-check against the same edge formula cell_bounds uses, so grid-line
    # points land in the larger-index cell despite division round-off
    idx = np.where(x >= lo + (idx + 1) * step, idx + 1, idx)
    idx = np.where(x < lo + idx * step, idx - 1, idx)
    # closed upper bbox edge
    return np.clip(idx, 0, n - 1)


def locate(grid: RegionGrid, lat: float, lon: float) -> CellId | None:
    """Cell containing the point, or ``None`` when it lies outside the bbox."""
    b = grid.bbox
    if not (math.isfinite(lat) and math.isfinite(lon)) or not b.contains(lat, lon):
        return None
    row = int(_axis_index(lat, b.lat_min, b.lat_max, grid.cell_dlat, grid.rows))
    col = int(_axis_index(lon, b.lon_min, b.lon_max, grid.cell_dlon, grid.cols))
    return CellId(row, col)


def locate_many(grid: RegionGrid, lat, lon) -> np.ndarray:
    """Vectorised ``locate`` returning linear indices, ``-1`` for outside points."""
    lat = np.asarray(lat, dtype=np.float64)
    lon = np.asarray(lon, dtype=np.float64)
    b = grid.bbox
    inside = ((lat >= b.lat_min) & (lat <= b.lat_max) & (lon >= b.lon_min) & (lon <= b.lon_max))
    rows = _axis_index(np.where(inside, lat, b.lat_min), b.lat_min, b.lat_max,
                       grid.cell_dlat, grid.rows)
    cols = _axis_index(np.where(inside, lon, b.lon_min), b.lon_min, b.lon_max,
                       grid.cell_dlon, grid.cols)
    return np.where(inside, rows * grid.cols + cols, -1)


def cell_bounds(grid: RegionGrid, cell: CellId) -> BoundingBox:
    grid._check(cell)
    return BoundingBox(grid.lat_edge(cell.row), grid.lat_edge(cell.row + 1),
                       grid.lon_edge(cell.col), grid.lon_edge(cell.col + 1))


def cell_center(grid: RegionGrid, cell: CellId) -> tuple[float, float]:
    b = cell_bounds(grid, cell)
    return 0.5 * (b.lat_min + b.lat_max), 0.5 * (b.lon_min + b.lon_max)
