import json
import subprocess
import sys

import numpy as np
import pytest

from riskfusion.cli import STAGES, main, workdir_lock

SMALL = """\
seed: 7
synth: {rows: 10, cols: 12}
eval: {folds: 3, models: [fcn, model_dfnn], features: [uv]}
train: {max_epochs: 20, patience: 5}
attribute: {max_cells: 2, steps: 20}
"""


def write_config(tmp_path, text=SMALL):
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    return p


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = write_config(root)
    work = root / "work"
    for stage in STAGES:
        assert main([stage, "--config", str(cfg), "--workdir", str(work)]) == 0, stage
    return work


def test_full_run_writes_artifacts(run_dir):
    for name in ("grid.json", "features.csv", "dictionary.txt", "labels.csv", "model.ckpt",
                 "history.csv", "eval/eval_grid.csv", "eval/report.txt",
                 "eval/cv_predictions.csv", "predictions.csv", "attribution/summary.csv",
                 "attribution/mean.csv", "heatmap_truth.geojson", "heatmap_pred.geojson",
                 "heatmap_cv.geojson", "heatmap_truth.png"):
        assert (run_dir / name).is_file(), name
    header = (run_dir / "features.csv").read_text().splitlines()[0].split(",")
    assert len(header) == 3 + 71 + 53


def test_geojson_has_every_cell(run_dir):
    fc = json.loads((run_dir / "heatmap_pred.geojson").read_text())
    assert len(fc["features"]) == 120
    assert all(f["properties"]["risk"] in (0, 1, 2) for f in fc["features"])


def test_cv_heatmap_agreement_equals_pooled_accuracy(run_dir):
    def risks(name):
        fc = json.loads((run_dir / name).read_text())
        return np.array([f["properties"]["risk"] for f in fc["features"]])

    agree = np.mean(risks("heatmap_cv.geojson") == risks("heatmap_truth.geojson"))
    report = (run_dir / "eval" / "report.txt").read_text().splitlines()
    start = next(i for i, line in enumerate(report) if line.startswith("confusion"))
    cm = np.array([[int(v) for v in line.split()] for line in report[start + 1:start + 4]])
    assert agree == np.trace(cm) / cm.sum()


def test_attribution_summary_rows(run_dir):
    lines = (run_dir / "attribution" / "summary.csv").read_text().splitlines()
    assert lines[0] == "row,col,target,f_x,f_baseline,completeness_gap"
    assert 1 <= len(lines) - 1 <= 2


def test_unknown_stage_exits_1(capsys):
    assert main(["fly"]) == 1
    assert "fly" in capsys.readouterr().err


def test_missing_checkpoint_exits_2_and_names_stage(tmp_path, capsys):
    cfg = write_config(tmp_path)
    work = tmp_path / "w"
    assert main(["synth", "--config", str(cfg), "--workdir", str(work)]) == 0
    assert main(["featurize", "--config", str(cfg), "--workdir", str(work)]) == 0
    assert main(["predict", "--config", str(cfg), "--workdir", str(work)]) == 2
    assert "run the `train` stage first" in capsys.readouterr().err


def test_missing_raw_data_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["featurize", "--config", str(cfg), "--workdir", str(tmp_path / "w")]) == 2
    assert "`synth`" in capsys.readouterr().err


def test_config_error_exits_1_with_key(tmp_path, capsys):
    cfg = write_config(tmp_path, SMALL + "model: {kind: svm}\n")
    assert main(["synth", "--config", str(cfg), "--workdir", str(tmp_path / "w")]) == 1
    assert "model.kind" in capsys.readouterr().err


def test_locked_workdir_is_refused(tmp_path, capsys):
    cfg = write_config(tmp_path)
    work = tmp_path / "w"
    with workdir_lock(work):
        assert main(["synth", "--config", str(cfg), "--workdir", str(work)]) == 1
    assert "locked" in capsys.readouterr().err


def test_console_entry_point():
    out = subprocess.run([sys.executable, "-m", "riskfusion.cli", "--help"],
                         capture_output=True, text=True, check=True)
    for stage in STAGES:
        assert stage in out.stdout
