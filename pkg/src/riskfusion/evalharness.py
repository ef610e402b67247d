"""K-fold evaluation protocol and accuracy reports."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .models import Model
from .sampling import FoldPlan, kfold_split, rebalance  # noqa: F401  (re-exported)
from .training import TrainConfig, train

# (model kind, feature set) rows and columns of the accuracy grid
GRID_MODELS = ("fcn", "cnne", "feature_dfnn", "model_dfnn")
GRID_FEATURES = ("uv", "u", "v")
FEATURE_TITLES = {"uv": "Multimodal", "u": "Spatio-temporal", "v": "Visual", "vu": "Swapped"}
MODEL_TITLES = {"fcn": "FCN", "cnne": "CNNE", "feature_dfnn": "Feature-DFNN",
                "model_dfnn": "Model-DFNN"}


@dataclass
class EvalReport:
    """Accuracy over one or more test folds."""

    fold_accuracy: list[float]
    confusion: np.ndarray  # rows: true class, columns: predicted class
    n_classes: int = 3

    @property
    def accuracy(self) -> float:
        return float(np.mean(self.fold_accuracy))

    @property
    def recall(self) -> np.ndarray:
        support = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(support > 0, np.diag(self.confusion) / support, np.nan)

    @property
    def pooled_accuracy(self) -> float:
        """Correct predictions over all test cells (equals ``accuracy`` for equal folds)."""
        return float(np.trace(self.confusion) / self.confusion.sum())

    def merge(self, other: "EvalReport") -> "EvalReport":
        return EvalReport(self.fold_accuracy + other.fold_accuracy,
                          self.confusion + other.confusion, self.n_classes)


def confusion_matrix(y_true, y_pred, n_classes: int = 3) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true), np.asarray(y_pred)), 1)
    return cm


def evaluate(model: Model, test_index, xu: np.ndarray, xv: np.ndarray,
             y: np.ndarray) -> EvalReport:
    """Accuracy of argmax predictions (ties go to the lowest class) on ``test_index``."""
    test_index = np.asarray(test_index, dtype=np.int64)
    if test_index.size == 0:
        raise ValueError("empty test set")
    if model.training:
        raise ValueError("evaluate needs a model in eval mode (dropout disabled)")
    pred = model.predict(xu[test_index], xv[test_index])
    truth = np.asarray(y)[test_index]
    return EvalReport([float(np.mean(pred == truth))],
                      confusion_matrix(truth, pred, model.n_classes), model.n_classes)


@dataclass
class CVResult:
    kind: str
    inputs: str
    report: EvalReport
    predictions: np.ndarray  # out-of-fold prediction per sample
    epochs: list[int] = field(default_factory=list)


def cross_validate(kind: str, xu: np.ndarray, xv: np.ndarray, y: np.ndarray,
                   cfg: TrainConfig, plan: FoldPlan, inputs: str = "uv") -> CVResult:
    """Train on each fold's complement and test on the fold.

    Fold ``i`` trains with seed ``cfg.seed + i``; rebalancing and the
    early-stopping holdout happen inside the training part only.
    """
    y = np.asarray(y, dtype=np.int64)
    report = None
    pred = np.full(y.shape, -1, dtype=np.int64)
    epochs = []
    for i in range(plan.k):
        tr, te = plan.train_test(i)
        model, hist = train(kind, xu[tr], xv[tr], y[tr], replace(cfg, seed=cfg.seed + i),
                            inputs=inputs)
        fold = evaluate(model, te, xu, xv, y)
        pred[te] = model.predict(xu[te], xv[te])
        report = fold if report is None else report.merge(fold)
        epochs.append(len(hist.epochs))
    return CVResult(kind, inputs, report, pred, epochs)


def accuracy_grid(xu, xv, y, cfg: TrainConfig, plan: FoldPlan,
                  models: Iterable[str] = GRID_MODELS,
                  features: Iterable[str] = GRID_FEATURES) -> dict[tuple[str, str], CVResult]:
    return {(m, f): cross_validate(m, xu, xv, y, cfg, plan, inputs=f)
            for m in models for f in features}


def grid_csv(results: dict[tuple[str, str], CVResult]) -> str:
    lines = ["model,features,mean_accuracy," + ",".join(
        f"fold{i}" for i in range(len(next(iter(results.values())).report.fold_accuracy)))]
    for (m, f), r in results.items():
        folds = ",".join(f"{a:.6f}" for a in r.report.fold_accuracy)
        lines.append(f"{m},{f},{r.report.accuracy:.6f},{folds}")
    return "\n".join(lines) + "\n"


def grid_table(results: dict[tuple[str, str], CVResult]) -> str:
    """Model-by-feature-set table of mean accuracies in percent."""
    models = list(dict.fromkeys(m for m, _ in results))
    feats = list(dict.fromkeys(f for _, f in results))
    head = [""] + [FEATURE_TITLES.get(f, f) for f in feats]
    rows = [[MODEL_TITLES.get(m, m)] + [
        f"{100 * results[(m, f)].report.accuracy:.1f}" if (m, f) in results else "-"
        for f in feats] for m in models]
    widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
    fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w)
                              for i, (c, w) in enumerate(zip(r, widths)))
    rule = "-" * len(fmt(head))
    return "\n".join([fmt(head), rule, *map(fmt, rows)]) + "\n"


def write_grid(results, out_dir) -> None:
    out = Path(out_dir)
    (out / "eval_grid.csv").write_text(grid_csv(results))
    (out / "eval_grid.txt").write_text(grid_table(results))


def report_text(result: CVResult) -> str:
    r = result.report
    lines = [f"{MODEL_TITLES.get(result.kind, result.kind)} on "
             f"{FEATURE_TITLES.get(result.inputs, result.inputs)} features",
             f"mean fold accuracy  {100 * r.accuracy:.2f}%",
             f"pooled accuracy     {100 * r.pooled_accuracy:.2f}%",
             "fold accuracies     " + " ".join(f"{100 * a:.2f}" for a in r.fold_accuracy),
             "recall per level    " + " ".join(f"{x:.3f}" for x in r.recall),
             "confusion (rows true, columns predicted):"]
    lines += ["  " + " ".join(f"{v:5d}" for v in row) for row in r.confusion]
    return "\n".join(lines) + "\n"
