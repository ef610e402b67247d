"""Integrated-gradients attribution over the input feature dimensions."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .st_features import BLOCK_NAMES as U_BLOCKS, D_CON, D_POI, D_TRA, D_WID
from .visual_features import D_CNN, D_FRA

V_BLOCKS = ("fra", "cnn")


@dataclass(frozen=True)
class AttributionConfig:
    steps: int = 50
    baseline_u: np.ndarray | None = None  # zeros when None
    baseline_v: np.ndarray | None = None
    target: int | None = None  # predicted class when None
    chunk: int = 256

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("integrated gradients needs at least one step (m >= 1)")
        for b in (self.baseline_u, self.baseline_v):
            if b is not None and not np.isfinite(b).all():
                raise ValueError("baseline must be finite")


@dataclass
class AttributionResult:
    attribution: np.ndarray  # length d_u + d_v, X_u dims first
    target: int
    f_x: float
    f_baseline: float

    @property
    def completeness_gap(self) -> float:
        return abs(float(self.attribution.sum()) - (self.f_x - self.f_baseline))


def _scores(model, xu: np.ndarray, xv: np.ndarray, target: int,
            need_grad: bool) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    tu, tv = Tensor(xu, requires_grad=need_grad), Tensor(xv, requires_grad=need_grad)
    s = model.score(model.forward_standardized(tu, tv))
    col = s.value[:, target].copy()
    if not need_grad:
        return col, None, None
    mask = np.zeros(s.shape)
    mask[:, target] = 1.0
    ad.backward(ad.reduce_sum(s * Tensor(mask)))
    return col, tu.grad, tv.grad


def integrated_gradients(model, xu, xv, cfg: AttributionConfig = AttributionConfig()
                         ) -> AttributionResult:
    """Attribution of the target-class score to each input dimension.

    Uses the right Riemann sum over ``cfg.steps`` points of the straight path
    from the baseline to ``(xu, xv)``.  The path runs in the model's
    standardised input space (after the fixed per-dimension log/z-score
    transform), so dimensions map one to one onto the raw features and the
    path endpoints are the raw input and raw baseline.  The score is the
    model's ``score`` output (the pre-softmax logit for single-head models).
    """
    if getattr(model, "training", False):
        raise ValueError("integrated gradients needs a model in eval mode (dropout disabled)")
    xu = np.asarray(xu, dtype=np.float64).ravel()
    xv = np.asarray(xv, dtype=np.float64).ravel()
    bu = np.zeros_like(xu) if cfg.baseline_u is None else np.asarray(cfg.baseline_u, float).ravel()
    bv = np.zeros_like(xv) if cfg.baseline_v is None else np.asarray(cfg.baseline_v, float).ravel()
    if bu.shape != xu.shape or bv.shape != xv.shape:
        raise ValueError("baseline shape does not match the input")
    target = cfg.target
    if target is None:
        target = int(np.argmax(model.predict_proba(xu[None], xv[None])[0]))
    (xu, bu), (xv, bv) = model.standardize(np.stack([xu, bu]), np.stack([xv, bv]))
    m = cfg.steps
    grad_u, grad_v = np.zeros_like(xu), np.zeros_like(xv)
    alphas = np.arange(1, m + 1, dtype=np.float64) / m
    for start in range(0, m, cfg.chunk):
        a = alphas[start:start + cfg.chunk, None]
        _, gu, gv = _scores(model, bu + a * (xu - bu), bv + a * (xv - bv), target, True)
        grad_u += gu.sum(axis=0)
        grad_v += gv.sum(axis=0)
    attribution = np.concatenate([(xu - bu) * grad_u / m, (xv - bv) * grad_v / m])
    ends, _, _ = _scores(model, np.stack([xu, bu]), np.stack([xv, bv]), target, False)
    return AttributionResult(attribution, target, float(ends[0]), float(ends[1]))


def feature_names(dims_u=(D_TRA, D_POI, D_CON, D_WID), dims_v=(D_FRA, D_CNN)
                  ) -> list[tuple[str, str]]:
    """``(block, name)`` for every input dimension, X_u first."""
    named = {
        "tra": lambda i: f"{'in' if i < 24 else 'out'}_h{i % 24:02d}",
        "con": lambda i: ("high", "med", "low")[i] if i < 3 else f"con_{i}",
        "wid": lambda i: f"level_{i + 1}",
    }
    out = []
    for block, d in zip(U_BLOCKS + V_BLOCKS, tuple(dims_u) + tuple(dims_v)):
        name = named.get(block, lambda i, b=block: f"{b}_{i}")
        out += [(block, f"{block}.{name(i)}") for i in range(d)]
    return out


@dataclass
class RankedDimension:
    dim_index: int
    block: str
    name: str
    attribution: float


def rank_dimensions(result: AttributionResult, names: list[tuple[str, str]] | None = None
                    ) -> list[RankedDimension]:
    """Dimensions by decreasing signed attribution; ties by ascending index."""
    names = feature_names() if names is None else names
    if len(names) != result.attribution.size:
        raise ValueError(f"{len(names)} names for {result.attribution.size} attributions")
    order = np.lexsort((np.arange(result.attribution.size), -result.attribution))
    return [RankedDimension(int(i), names[i][0], names[i][1], float(result.attribution[i]))
            for i in order]


def block_sums(ranked: list[RankedDimension]) -> dict[str, float]:
    sums: dict[str, float] = {}
    for r in sorted(ranked, key=lambda r: r.dim_index):
        sums[r.block] = sums.get(r.block, 0.0) + r.attribution
    return sums


def ranking_csv(ranked: list[RankedDimension]) -> str:
    lines = ["dim_index,block,name,attribution"]
    lines += [f"{r.dim_index},{r.block},{r.name},{r.attribution:.17g}" for r in ranked]
    return "\n".join(lines) + "\n"


def ranking_table(ranked: list[RankedDimension], top: int = 20) -> str:
    lines = [f"{'rank':>4}  {'dim':>4}  {'block':<5}  {'name':<14}  attribution"]
    for k, r in enumerate(ranked[:top], 1):
        lines.append(f"{k:>4}  {r.dim_index:>4}  {r.block:<5}  {r.name:<14}  {r.attribution:+.6g}")
    lines.append("")
    lines.append("block sums:")
    lines += [f"  {b:<5} {s:+.6g}" for b, s in block_sums(ranked).items()]
    return "\n".join(lines) + "\n"


def write_ranking(ranked: list[RankedDimension], out_dir, stem: str = "attribution") -> None:
    out = Path(out_dir)
    (out / f"{stem}.csv").write_text(ranking_csv(ranked))
    (out / f"{stem}.txt").write_text(ranking_table(ranked))
