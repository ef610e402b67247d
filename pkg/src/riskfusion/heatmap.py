"""Per-cell risk maps as GeoJSON and as a small PNG raster."""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .geogrid import RegionGrid, cell_bounds

# low, medium, high
PALETTE = ((46, 139, 87), (255, 191, 0), (204, 0, 0))
UNKNOWN_COLOR = (128, 128, 128)


def cell_ring(grid: RegionGrid, row: int, col: int) -> list[list[float]]:
    """Closed counter-clockwise ring of ``[lon, lat]`` pairs."""
    b = cell_bounds(grid, grid.cell_at(row * grid.cols + col))
    return [[b.lon_min, b.lat_min], [b.lon_max, b.lat_min], [b.lon_max, b.lat_max],
            [b.lon_min, b.lat_max], [b.lon_min, b.lat_min]]


def heatmap_geojson(grid: RegionGrid, risk, na=None) -> dict:
    """FeatureCollection with one polygon per cell in row-major order.

    ``risk`` holds a class per cell (linear index order) or is a mapping from
    ``(row, col)`` to class; cells outside the grid raise ``KeyError``.
    """
    levels = _per_cell(grid, risk)
    sums = None if na is None else np.asarray(na, dtype=np.float64)
    if sums is not None and sums.shape != (grid.n_cells,):
        raise ValueError(f"na must have one value per cell ({grid.n_cells}), got {sums.shape}")
    features = []
    for i in range(grid.n_cells):
        r, c = divmod(i, grid.cols)
        props = {"row": r, "col": c, "risk": None if levels[i] < 0 else int(levels[i]),
                 "na": None if sums is None else float(sums[i])}
        features.append({"type": "Feature",
                         "geometry": {"type": "Polygon", "coordinates": [cell_ring(grid, r, c)]},
                         "properties": props})
    return {"type": "FeatureCollection", "features": features}


def _per_cell(grid: RegionGrid, risk) -> np.ndarray:
    if isinstance(risk, dict):
        out = np.full(grid.n_cells, -1, dtype=np.int64)
        for (r, c), level in risk.items():
            if not (0 <= r < grid.rows and 0 <= c < grid.cols):
                raise KeyError(f"cell ({r}, {c}) is not in the {grid.rows}x{grid.cols} grid")
            out[r * grid.cols + c] = int(level)
        return out
    out = np.asarray(risk, dtype=np.int64)
    if out.shape != (grid.n_cells,):
        raise KeyError(f"expected {grid.n_cells} cell classes, got shape {out.shape}")
    return out


def write_geojson(path, collection: dict) -> None:
    Path(path).write_text(json.dumps(collection, separators=(",", ":")) + "\n")


def risk_raster(grid: RegionGrid, risk) -> Image.Image:
    """One pixel per cell, north up."""
    levels = _per_cell(grid, risk).reshape(grid.rows, grid.cols)[::-1]
    colors = np.array(PALETTE + (UNKNOWN_COLOR,), dtype=np.uint8)
    return Image.fromarray(colors[np.where(levels < 0, 3, levels)], mode="RGB")


def write_png(path, grid: RegionGrid, risk) -> None:
    risk_raster(grid, risk).save(path, format="PNG", optimize=False)
