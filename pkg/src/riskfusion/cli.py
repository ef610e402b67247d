"""Command-line pipeline: synth, featurize, label, train, eval, predict, attribute, heatmap.

Every stage reads the previous stages' artifacts from the work directory and
writes its own there.  Exit codes: 0 ok, 1 usage/config/data error,
2 missing upstream artifact, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import logging
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import attribution, evalharness, heatmap, pipeline
from .config import PipelineConfig, load_config
from .errors import (ConfigError, DataError, DimensionMismatchError, MissingArtifactError,
                     NumericError, RiskFusionError)
from .geogrid import BoundingBox, RegionGrid, make_grid
from .labeling import DegenerateLabelingError, kmeans_levels, read_labels, write_labels
from .sampling import kfold_split
from .synthcity import FILES, generate
from .training import load_model, save_model, train

log = logging.getLogger("riskfusion")

STAGES = ("synth", "featurize", "label", "train", "eval", "predict", "attribute", "heatmap")

# artifact names inside the work directory
RAW = "raw"
GRID = "grid.json"
FEATURES = "features.csv"
DICTIONARY = "dictionary.txt"
LABELS = "labels.csv"
MODEL = "model.ckpt"
HISTORY = "history.csv"
EVAL_DIR = "eval"
PREDICTIONS = "predictions.csv"
ATTR_DIR = "attribution"


class UsageError(RiskFusionError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="riskfusion", description=__doc__.splitlines()[0])
    p.add_argument("stage", choices=STAGES, metavar="stage",
                   help="one of: " + ", ".join(STAGES))
    p.add_argument("--config", type=Path, default=None, help="YAML pipeline configuration")
    p.add_argument("--seed", type=int, default=None,
                   help="override every seed in the configuration (non-negative)")
    p.add_argument("--workdir", type=Path, default=None, help="override paths.workdir")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


# ---------------------------------------------------------------- helpers

def _need(path: Path, stage: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(stage, path)
    return path


def raw_paths(cfg: PipelineConfig) -> dict[str, Path]:
    raw = cfg.workdir / RAW
    out = {}
    for key in ("gps", "poi", "osm", "tiles", "cnn", "accidents"):
        given = getattr(cfg.paths, key)
        out[key] = Path(given) if given is not None else raw / FILES[key]
    return out


def resolve_grid(cfg: PipelineConfig) -> RegionGrid:
    g = cfg.grid
    if g.bbox is not None:
        try:
            bbox = BoundingBox(*map(float, g.bbox))
        except ValueError as exc:
            raise ConfigError("grid.bbox", str(exc)) from exc
        return make_grid(bbox, g.rows, g.cols, g.cell_km)
    meta = _need(cfg.workdir / RAW / FILES["meta"], "synth")
    d = json.loads(meta.read_text())["grid"]
    bbox = BoundingBox(d["lat_min"], d["lat_max"], d["lon_min"], d["lon_max"])
    return make_grid(bbox, d["rows"], d["cols"], d["cell_km"])


def _write_grid(cfg: PipelineConfig, grid: RegionGrid) -> None:
    (cfg.workdir / GRID).write_text(json.dumps(grid.to_dict(), indent=2, sort_keys=True) + "\n")


def load_grid(cfg: PipelineConfig) -> RegionGrid:
    d = json.loads(_need(cfg.workdir / GRID, "featurize").read_text())
    bbox = BoundingBox(d["lat_min"], d["lat_max"], d["lon_min"], d["lon_max"])
    return make_grid(bbox, d["rows"], d["cols"], d["cell_km"])


def write_features(path: Path, grid: RegionGrid, fs: pipeline.FeatureSet) -> None:
    lines = []
    for i in range(grid.n_cells):
        r, c = divmod(i, grid.cols)
        vals = ",".join(f"{v:.17g}" for v in np.concatenate([fs.xu[i], fs.xv[i]]))
        lines.append(f"{r},{c},{int(fs.visual_missing[i])},{vals}")
    path.write_text("\n".join(lines) + "\n")


def read_features(cfg: PipelineConfig, grid: RegionGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    path = _need(cfg.workdir / FEATURES, "featurize")
    data = np.loadtxt(path, delimiter=",", ndmin=2)
    d_u, d_v = cfg.features.d_u, cfg.features.d_v
    if data.shape != (grid.n_cells, 3 + d_u + d_v):
        raise DimensionMismatchError(
            f"{path}: expected {grid.n_cells} rows of {3 + d_u + d_v} values, got {data.shape}; "
            "features.* dims do not match the featurized data")
    return data[:, 3:3 + d_u], data[:, 3 + d_u:], data[:, 2].astype(bool)


def _labels(cfg: PipelineConfig, grid: RegionGrid) -> tuple[np.ndarray, np.ndarray]:
    return read_labels(_need(cfg.workdir / LABELS, "label"), grid)


# ---------------------------------------------------------------- stages

def stage_synth(cfg: PipelineConfig) -> None:
    city = generate(cfg.synth, cfg.workdir / RAW)
    log.info("synthetic city %dx%d written to %s", city.grid.rows, city.grid.cols,
             cfg.workdir / RAW)


def stage_featurize(cfg: PipelineConfig) -> None:
    grid = resolve_grid(cfg)
    paths = raw_paths(cfg)
    for key in ("gps", "poi", "osm", "tiles"):
        _need(paths[key], "synth")
    f = cfg.features
    fs = pipeline.featurize(paths, grid, cfg.seed, cnn=f.cnn, d_fra=f.d_fra, d_cnn=f.d_cnn,
                            patches_per_tile=f.patches_per_tile)
    if fs.xu.shape[1] != f.d_u:
        raise DimensionMismatchError(f"X_u has {fs.xu.shape[1]} dims, config says {f.d_u}")
    _write_grid(cfg, grid)
    write_features(cfg.workdir / FEATURES, grid, fs)
    if fs.dictionary is not None:
        fs.dictionary.save(cfg.workdir / DICTIONARY)
    log.info("features for %d cells (%d without tiles)", grid.n_cells, int(fs.visual_missing.sum()))


def stage_label(cfg: PipelineConfig) -> None:
    grid = load_grid(cfg)
    na = pipeline.severity_sums(_need(raw_paths(cfg)["accidents"], "synth"), grid)
    try:
        y, centroids = kmeans_levels(na, seed=cfg.seed)
    except DegenerateLabelingError as exc:
        raise DataError(str(exc)) from exc
    write_labels(cfg.workdir / LABELS, grid, na, y)
    log.info("risk levels %s, centroids %s", np.bincount(y, minlength=3).tolist(),
             np.round(centroids, 3).tolist())


def stage_train(cfg: PipelineConfig) -> None:
    grid = load_grid(cfg)
    xu, xv, _ = read_features(cfg, grid)
    _, y = _labels(cfg, grid)
    model, hist = train(cfg.model.kind, xu, xv, y, cfg.train, inputs=cfg.model.inputs)
    save_model(cfg.workdir / MODEL, model, cfg.train)
    hist.to_csv(cfg.workdir / HISTORY)
    log.info("trained %s for %d epochs (best %d)", cfg.model.kind, len(hist.epochs),
             hist.best_epoch)


def stage_eval(cfg: PipelineConfig) -> None:
    grid = load_grid(cfg)
    xu, xv, _ = read_features(cfg, grid)
    _, y = _labels(cfg, grid)
    plan = kfold_split(len(y), cfg.eval.folds, y, cfg.seed)
    results = evalharness.accuracy_grid(xu, xv, y, cfg.train, plan,
                                        cfg.eval.models, cfg.eval.features)
    out = cfg.workdir / EVAL_DIR
    out.mkdir(exist_ok=True)
    evalharness.write_grid(results, out)
    key = (cfg.model.kind, cfg.model.inputs)
    if key in results:
        r = results[key]
        lines = ["row,col,truth,pred"]
        lines += [f"{i // grid.cols},{i % grid.cols},{y[i]},{r.predictions[i]}"
                  for i in range(grid.n_cells)]
        (out / "cv_predictions.csv").write_text("\n".join(lines) + "\n")
        (out / "report.txt").write_text(evalharness.report_text(r))
    log.info("\n%s", evalharness.grid_table(results))


def stage_predict(cfg: PipelineConfig) -> None:
    grid = load_grid(cfg)
    xu, xv, _ = read_features(cfg, grid)
    model, _ = load_model(_need(cfg.workdir / MODEL, "train"))
    if (model.d_u, model.d_v) != (xu.shape[1], xv.shape[1]):
        raise DimensionMismatchError("checkpoint input dims do not match the features")
    probs = model.predict_proba(xu, xv)
    pred = np.argmax(probs, axis=1)
    lines = ["row,col,pred," + ",".join(f"p{k}" for k in range(probs.shape[1]))]
    lines += [f"{i // grid.cols},{i % grid.cols},{pred[i]}," +
              ",".join(f"{p:.17g}" for p in probs[i]) for i in range(grid.n_cells)]
    (cfg.workdir / PREDICTIONS).write_text("\n".join(lines) + "\n")


def _read_predictions(path: Path, grid: RegionGrid) -> np.ndarray:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    out = np.full(grid.n_cells, -1, dtype=np.int64)
    for r, c, p in data[:, :3].astype(np.int64):
        if not (0 <= r < grid.rows and 0 <= c < grid.cols):
            raise DataError(f"{path}: cell ({r}, {c}) is not in the grid")
        out[r * grid.cols + c] = p
    return out


def stage_attribute(cfg: PipelineConfig) -> None:
    grid = load_grid(cfg)
    xu, xv, _ = read_features(cfg, grid)
    model, _ = load_model(_need(cfg.workdir / MODEL, "train"))
    model.eval()
    if cfg.attribute.cells:
        cells = []
        for r, c in cfg.attribute.cells:
            if not (0 <= r < grid.rows and 0 <= c < grid.cols):
                raise ConfigError("attribute.cells", f"cell ({r}, {c}) is not in the grid")
            cells.append(r * grid.cols + c)
    else:
        cells = np.flatnonzero(model.predict(xu, xv) == model.n_classes - 1).tolist()
    cells = cells[:cfg.attribute.max_cells]
    out = cfg.workdir / ATTR_DIR
    out.mkdir(exist_ok=True)
    names = attribution.feature_names(
        (cfg.features.d_tra, cfg.features.d_poi, cfg.features.d_con, cfg.features.d_wid),
        (cfg.features.d_fra, cfg.features.d_cnn))
    total = np.zeros(len(names))
    summary = ["row,col,target,f_x,f_baseline,completeness_gap"]
    for i in cells:
        res = attribution.integrated_gradients(
            model, xu[i], xv[i], attribution.AttributionConfig(steps=cfg.attribute.steps))
        r, c = divmod(i, grid.cols)
        attribution.write_ranking(attribution.rank_dimensions(res, names), out, f"cell_{r}_{c}")
        summary.append(f"{r},{c},{res.target},{res.f_x:.17g},{res.f_baseline:.17g},"
                       f"{res.completeness_gap:.17g}")
        total += res.attribution
    (out / "summary.csv").write_text("\n".join(summary) + "\n")
    if cells:
        mean = attribution.AttributionResult(total / len(cells), -1, 0.0, 0.0)
        attribution.write_ranking(attribution.rank_dimensions(mean, names), out, "mean")


def stage_heatmap(cfg: PipelineConfig) -> None:
    grid = load_grid(cfg)
    na, y = _labels(cfg, grid)
    heatmap.write_geojson(cfg.workdir / "heatmap_truth.geojson", heatmap.heatmap_geojson(grid, y, na))
    heatmap.write_png(cfg.workdir / "heatmap_truth.png", grid, y)
    sources = {"pred": cfg.workdir / PREDICTIONS,
               "cv": cfg.workdir / EVAL_DIR / "cv_predictions.csv"}
    found = False
    for tag, path in sources.items():
        if not path.exists():
            continue
        found = True
        if tag == "cv":
            data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2).astype(np.int64)
            pred = np.full(grid.n_cells, -1, dtype=np.int64)
            pred[data[:, 0] * grid.cols + data[:, 1]] = data[:, 3]
        else:
            pred = _read_predictions(path, grid)
        heatmap.write_geojson(cfg.workdir / f"heatmap_{tag}.geojson",
                              heatmap.heatmap_geojson(grid, pred, na))
        heatmap.write_png(cfg.workdir / f"heatmap_{tag}.png", grid, pred)
    if not found:
        log.info("no predictions yet; wrote the ground-truth heatmap only")


STAGE_FUNCS = {"synth": stage_synth, "featurize": stage_featurize, "label": stage_label,
               "train": stage_train, "eval": stage_eval, "predict": stage_predict,
               "attribute": stage_attribute, "heatmap": stage_heatmap}


@contextmanager
def workdir_lock(workdir: Path):
    """Exclusive advisory lock so two stages never write one workdir at once."""
    workdir.mkdir(parents=True, exist_ok=True)
    with open(workdir / ".lock", "w") as fh:
        try:
            fcntl.flock(fh, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError as exc:
            raise RiskFusionError(f"work directory {workdir} is locked by another stage") from exc
        try:
            yield
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def run(stage: str, cfg: PipelineConfig) -> None:
    if stage not in STAGE_FUNCS:
        raise UsageError(f"unknown stage {stage!r}")
    with workdir_lock(cfg.workdir):
        STAGE_FUNCS[stage](cfg)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(f"riskfusion: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = {}
        if args.seed is not None:
            overrides.update({"seed": args.seed, "train.seed": args.seed,
                              "synth.seed": args.seed})
        if args.workdir is not None:
            overrides["paths.workdir"] = str(args.workdir)
        cfg = load_config(args.config, overrides)
        run(args.stage, cfg)
    except MissingArtifactError as exc:
        print(f"riskfusion: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"riskfusion: numeric failure: {exc}", file=sys.stderr)
        return 3
    except (ConfigError, UsageError) as exc:
        print(f"riskfusion: config error: {exc}", file=sys.stderr)
        return 1
    except (RiskFusionError, ValueError) as exc:
        print(f"riskfusion: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
