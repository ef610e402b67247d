"""Mini-batch Adam training with early stopping on validation accuracy."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import NumericError
from .models import Model, Preprocessor, build_model, model_from_config
from .sampling import rebalance, stratified_holdout

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    dropout: float = 0.4
    batch_size: int = 32
    max_epochs: int = 128
    patience: int = 16
    seed: int = 42
    n_classes: int = 3
    hidden: int = 64
    d_z: int = 64
    d_z_u: int = 32
    d_z_v: int = 64
    val_fraction: float = 0.1
    resample: str = "over"
    renormalize: bool = True
    bias: bool = False
    log_counts: bool = True

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "patience", "n_classes", "hidden",
                     "d_z", "d_z_u", "d_z_v"):
            if getattr(self, name) <= 0:
                raise ValueError(f"TrainConfig.{name} must be positive")
        if self.patience >= self.max_epochs:
            raise ValueError("TrainConfig.patience must be smaller than max_epochs")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("TrainConfig.dropout must be in [0, 1)")


@dataclass
class History:
    epochs: list[int] = field(default_factory=list)
    train_loss: list[float] = field(default_factory=list)
    val_acc: list[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_early: bool = False

    def append(self, epoch: int, loss: float, acc: float) -> None:
        self.epochs.append(epoch)
        self.train_loss.append(loss)
        self.val_acc.append(acc)

    def to_csv(self, path) -> None:
        lines = ["epoch,train_loss,val_acc"]
        lines += [f"{e},{l:.17g},{a:.17g}" for e, l, a in
                  zip(self.epochs, self.train_loss, self.val_acc)]
        Path(path).write_text("\n".join(lines) + "\n")


def model_kwargs(kind: str, cfg: TrainConfig) -> dict:
    kw = dict(hidden=cfg.hidden, n_classes=cfg.n_classes, bias=cfg.bias, dropout=cfg.dropout)
    if kind == "feature_dfnn":
        kw["d_z"] = cfg.d_z
    elif kind in ("model_dfnn", "cnne"):
        kw.update(d_z_u=cfg.d_z_u, d_z_v=cfg.d_z_v, renormalize=cfg.renormalize)
    return kw


def accuracy(model: Model, xu: np.ndarray, xv: np.ndarray, y: np.ndarray) -> float:
    return float(np.mean(model.predict(xu, xv) == y))


def fit(model: Model, xu: np.ndarray, xv: np.ndarray, y: np.ndarray, cfg: TrainConfig,
        val: tuple[np.ndarray, np.ndarray, np.ndarray] | None = None,
        train_index: np.ndarray | None = None) -> History:
    """Optimise ``model`` in place; returns the per-epoch history.

    ``train_index`` is the (possibly resampled) multiset of rows visited per
    epoch; defaults to every row once.  With ``val`` given, training stops
    once validation accuracy has not improved for ``cfg.patience`` epochs and
    the best weights are restored.
    """
    rng = np.random.default_rng(cfg.seed)
    order_rng = np.random.default_rng(rng.integers(2**63))
    drop_rng = np.random.default_rng(rng.integers(2**63))
    train_index = np.arange(len(y)) if train_index is None else np.asarray(train_index)
    opt = ad.Adam(model.params.values(), lr=cfg.lr)
    history = History()
    best_acc, best_state, since_best = -1.0, model.state(), 0
    last_finite = model.state()
    for epoch in range(1, cfg.max_epochs + 1):
        model.train()
        perm = order_rng.permutation(train_index)
        total, seen = 0.0, 0
        for start in range(0, perm.size, cfg.batch_size):
            batch = perm[start:start + cfg.batch_size]
            try:
                out = model.forward(Tensor(xu[batch]), Tensor(xv[batch]), drop_rng)
                loss = model.loss(out, y[batch])
                opt.zero_grad()
                ad.backward(loss)
                opt.step()
            except NumericError as exc:
                model.load_state(last_finite)
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
            total += float(loss.value) * batch.size
            seen += batch.size
        model.eval()
        last_finite = model.state()
        acc = accuracy(model, *val) if val is not None else float("nan")
        history.append(epoch, total / max(seen, 1), acc)
        if val is None:
            continue
        if acc > best_acc:
            best_acc, best_state, since_best = acc, last_finite, 0
            history.best_epoch = epoch
        else:
            since_best += 1
            if since_best >= cfg.patience:
                history.stopped_early = True
                break
    if val is not None:
        model.load_state(best_state)
    model.eval()
    return history


def train(kind: str, xu: np.ndarray, xv: np.ndarray, y: np.ndarray, cfg: TrainConfig,
          inputs: str = "uv") -> tuple[Model, History]:
    """Train a fresh model on a labelled training set.

    A stratified ``cfg.val_fraction`` of the rows is held out for early
    stopping; the rest is rebalanced per ``cfg.resample`` and used for the
    input standardisation statistics and the gradient steps.
    """
    y = np.asarray(y, dtype=np.int64)
    idx = np.arange(len(y))
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    split_seed, resample_seed, init_seed = (int(s.generate_state(1)[0]) for s in seeds)
    fit_idx, val_idx = stratified_holdout(idx, y, cfg.val_fraction, split_seed)
    steps_idx = rebalance(fit_idx, y, seed=resample_seed, mode=cfg.resample,
                          n_classes=cfg.n_classes)
    model = build_model(kind, xu.shape[1], xv.shape[1], init_seed, inputs=inputs,
                        **model_kwargs(kind, cfg))
    model.pre = Preprocessor.fit(xu[fit_idx], xv[fit_idx], log_u=cfg.log_counts)
    val = (xu[val_idx], xv[val_idx], y[val_idx]) if val_idx.size else None
    history = fit(model, xu, xv, y, cfg, val=val, train_index=steps_idx)
    return model, history


def save_model(path, model: Model, cfg: TrainConfig | None = None) -> None:
    manifest = {"model": model.config(), "train": asdict(cfg) if cfg else {}}
    ad.save_checkpoint(path, model.state(), manifest)


def load_model(path) -> tuple[Model, dict]:
    tensors, manifest = ad.load_checkpoint(path)
    model = model_from_config(manifest["model"])
    model.load_state(tensors)
    return model.eval(), manifest
