"""K-means with k-means++ seeding and Lloyd refinement."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    inertia: float
    n_iter: int


def _sq_dist(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = [x[rng.integers(n)]]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            # every point coincides with a centre already; pick any unused distinct point
            idx = rng.integers(n)
        else:
            idx = rng.choice(n, p=d2 / total)
        centers.append(x[idx])
        d2 = np.minimum(d2, ((x - x[idx]) ** 2).sum(axis=1))
    return np.array(centers, dtype=np.float64)


def lloyd(x: np.ndarray, centroids: np.ndarray, tol: float, max_iter: int) -> KMeansResult:
    c = centroids.copy()
    labels = np.zeros(x.shape[0], dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        labels = np.argmin(_sq_dist(x, c), axis=1)
        new = c.copy()
        for j in range(c.shape[0]):
            members = x[labels == j]
            if members.size:
                new[j] = members.mean(axis=0)
        shift = np.sqrt(((new - c) ** 2).sum(axis=1)).max()
        c = new
        if shift < tol:
            break
    labels = np.argmin(_sq_dist(x, c), axis=1)
    inertia = float(((x - c[labels]) ** 2).sum())
    return KMeansResult(c, labels, inertia, it)


def kmeans(x, k: int, seed: int = 0, tol: float = 1e-6, max_iter: int = 300,
           n_init: int = 1) -> KMeansResult:
    """Cluster rows of ``x``; the best of ``n_init`` seeded restarts by inertia.

    Raises ``ValueError`` when ``x`` has fewer than ``k`` distinct rows.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if np.unique(x, axis=0).shape[0] < k:
        raise ValueError(f"need at least {k} distinct points, got "
                         f"{np.unique(x, axis=0).shape[0]}")
    rng = np.random.default_rng(seed)
    best: KMeansResult | None = None
    for _ in range(n_init):
        res = lloyd(x, kmeans_pp_init(x, k, rng), tol, max_iter)
        if best is None or res.inertia < best.inertia - 1e-12:
            best = res
    return best
