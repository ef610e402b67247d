"""Per-cell accident severity sums and their three-level discretisation."""

from __future__ import annotations

from pathlib import Path
from typing import Iterable

import numpy as np

from .geogrid import RegionGrid, locate_many
from .ingest import AccidentRecord
from .kmeans import kmeans

N_LEVELS = 3


class DegenerateLabelingError(ValueError):
    pass


def aggregate_severity(accidents: Iterable[AccidentRecord], grid: RegionGrid) -> np.ndarray:
    """Sum of severities per cell (linear index order); outside records are dropped."""
    lat, lon, sev = [], [], []
    for a in accidents:
        lat.append(a.lat)
        lon.append(a.lon)
        sev.append(a.severity)
    out = np.zeros(grid.n_cells)
    if sev:
        cells = locate_many(grid, lat, lon)
        inside = cells >= 0
        np.add.at(out, cells[inside], np.asarray(sev)[inside])
    return out


def kmeans_levels(values, seed: int = 0, n_levels: int = N_LEVELS,
                  n_init: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """1-D k-means of severity sums into ordered risk levels.

    Returns ``(y, centroids)`` where clusters are relabelled by ascending
    centroid, so level 0 is the lowest-risk cluster.
    """
    values = np.asarray(values, dtype=np.float64)
    if np.unique(values).size < n_levels:
        raise DegenerateLabelingError(
            f"degenerate labeling: need {n_levels} distinct severity sums, "
            f"got {np.unique(values).size}")
    res = kmeans(values, n_levels, seed=seed, tol=1e-9, max_iter=1000, n_init=n_init)
    centroids = res.centroids[:, 0]
    order = np.argsort(centroids, kind="stable")
    rank = np.empty(n_levels, dtype=np.int64)
    rank[order] = np.arange(n_levels)
    return rank[res.labels], centroids[order]


def write_labels(path, grid: RegionGrid, na: np.ndarray, y: np.ndarray) -> None:
    lines = []
    for i in range(grid.n_cells):
        r, c = divmod(i, grid.cols)
        lines.append(f"{r},{c},{na[i]:.17g},{int(y[i])}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_labels(path, grid: RegionGrid) -> tuple[np.ndarray, np.ndarray]:
    na = np.zeros(grid.n_cells)
    y = np.full(grid.n_cells, -1, dtype=np.int64)
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        r, c, a, lvl = line.split(",")
        i = int(r) * grid.cols + int(c)
        na[i], y[i] = float(a), int(lvl)
    return na, y
