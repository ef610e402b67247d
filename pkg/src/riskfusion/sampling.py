"""Index-level sampling utilities: stratified folds, holdout splits, rebalancing."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FoldPlan:
    folds: tuple[np.ndarray, ...]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def train_test(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.folds[i]
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))
        return train, test


def kfold_split(n: int, k: int = 5, labels=None, seed: int = 0) -> FoldPlan:
    """Stratified shuffled k-fold split of ``range(n)``.

    Members of each class are shuffled and dealt round-robin, continuing the
    deal where the previous class stopped, so fold sizes differ by at most
    one overall and each class is spread within one sample of its share.
    """
    if n < k:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    rng = np.random.default_rng(seed)
    labels = np.zeros(n, dtype=np.int64) if labels is None else np.asarray(labels)
    if labels.shape != (n,):
        raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
    buckets: list[list[int]] = [[] for _ in range(k)]
    cursor = 0
    for c in np.unique(labels):
        members = np.flatnonzero(labels == c)
        if members.size < k:
            log.warning("class %s has %d < %d members; it is left unstratified", c, members.size, k)
        for idx in rng.permutation(members):
            buckets[cursor % k].append(int(idx))
            cursor += 1
    return FoldPlan(tuple(np.sort(np.array(b, dtype=np.int64)) for b in buckets), seed)


def stratified_holdout(indices: np.ndarray, labels: np.ndarray, fraction: float,
                       seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Split ``indices`` into (rest, holdout) with ~``fraction`` of every class held out."""
    rng = np.random.default_rng(seed)
    indices = np.asarray(indices)
    held = []
    for c in np.unique(labels[indices]):
        members = rng.permutation(indices[labels[indices] == c])
        n_hold = int(round(fraction * members.size))
        if members.size > 1:
            n_hold = min(max(n_hold, 1), members.size - 1)
        else:
            n_hold = 0
        held.append(members[:n_hold])
    holdout = np.sort(np.concatenate(held)) if held else np.array([], dtype=np.int64)
    rest = np.setdiff1d(indices, holdout)
    return rest, holdout


def rebalance(indices, labels, seed: int = 0, mode: str = "over",
              n_classes: int = 3) -> np.ndarray:
    """Resample training indices to equal class counts.

    ``over`` keeps every index and adds draws with replacement from each
    minority class up to the majority count; ``under`` subsamples every class
    without replacement down to the minority count; ``none`` is a no-op.
    """
    indices = np.asarray(indices, dtype=np.int64)
    labels = np.asarray(labels)
    if mode == "none":
        return indices.copy()
    groups = [indices[labels[indices] == c] for c in range(n_classes)]
    empty = [c for c, g in enumerate(groups) if g.size == 0]
    if empty:
        raise ValueError(f"cannot rebalance: no training samples for class(es) {empty}")
    rng = np.random.default_rng(seed)
    if mode == "over":
        target = max(g.size for g in groups)
        parts = [indices]
        for g in groups:
            if g.size < target:
                parts.append(rng.choice(g, size=target - g.size, replace=True))
        return np.concatenate(parts)
    if mode == "under":
        target = min(g.size for g in groups)
        return np.sort(np.concatenate([rng.choice(g, size=target, replace=False) for g in groups]))
    raise ValueError(f"unknown resample mode {mode!r}")
