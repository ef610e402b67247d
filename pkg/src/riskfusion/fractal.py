"""Box-counting multifractal spectrum of binary edge maps."""

from __future__ import annotations

import numpy as np

BOX_SIZES = (2, 4, 8, 16, 32, 64, 128)
Q_GRID = (-5.0, -3.0, -2.0, -1.0, 0.0, 2.0, 3.0, 5.0)


class EmptyMeasureError(ValueError):
    pass


class MassTable(dict):
    """``box size -> masses of the non-empty boxes``, plus the map ``extent``
    (side of the single box covering the whole map)."""

    def __init__(self, masses: dict[int, np.ndarray], extent: int):
        super().__init__(masses)
        self.extent = int(extent)


def box_counts(edges: np.ndarray, sizes=BOX_SIZES) -> MassTable:
    """Normalised edge mass of every non-empty ``s x s`` box, for each size ``s``.

    Maps whose sides are not multiples of ``s`` are zero-padded on the
    bottom/right, which adds only empty boxes.
    """
    edges = np.asarray(edges)
    if edges.ndim != 2 or min(edges.shape) < max(sizes):
        raise ValueError(f"edge map {edges.shape} smaller than largest box {max(sizes)}")
    e = (edges != 0).astype(np.float64)
    total = e.sum()
    if total == 0:
        raise EmptyMeasureError("empty measure: edge map has no edge pixels")
    h, w = e.shape
    masses = {}
    for s in sizes:
        H, W = -(-h // s) * s, -(-w // s) * s
        padded = np.zeros((H, W))
        padded[:h, :w] = e
        mass = padded.reshape(H // s, s, W // s, s).sum(axis=(1, 3)).ravel()
        masses[int(s)] = mass[mass > 0] / total
    return MassTable(masses, max(h, w))


def generalized_dimensions(table: dict[int, np.ndarray], qs=Q_GRID,
                           extent: int | None = None) -> np.ndarray:
    """Generalized dimensions ``D(q)`` from a box-mass table.

    ``log sum_i mu_i^q`` is regressed on ``log(s / extent)`` by least squares
    through the origin: at ``s = extent`` one box holds all the mass, so the
    moment sum is exactly 1 there.  ``D(q) = slope / (q - 1)`` is then a
    positively weighted mean of per-scale Renyi dimensions, which keeps the
    spectrum non-increasing in ``q``.
    """
    sizes = sorted(table)
    if len(sizes) < 2:
        raise ValueError("degenerate regression: need at least two box sizes")
    if extent is None:
        extent = getattr(table, "extent", 2 * sizes[-1])
    if extent <= sizes[-1]:
        raise ValueError(f"extent {extent} must exceed the largest box size {sizes[-1]}")
    x = np.log(np.asarray(sizes, dtype=np.float64) / extent)
    out = np.empty(len(qs))
    for k, q in enumerate(qs):
        if q == 1.0:
            raise ValueError("q = 1 is not supported (information-dimension limit)")
        y = np.array([np.log(np.sum(table[s] ** q)) for s in sizes])
        slope = np.dot(x, y) / np.dot(x, x)
        out[k] = slope / (q - 1.0)
    return out


def spectrum(edges: np.ndarray, sizes=BOX_SIZES, qs=Q_GRID) -> np.ndarray:
    """Generalized dimensions of an edge map; all zeros for an empty map."""
    try:
        return generalized_dimensions(box_counts(edges, sizes), qs)
    except EmptyMeasureError:
        return np.zeros(len(qs))
