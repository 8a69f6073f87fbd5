import hashlib
import json

import numpy as np
import pandas as pd
import pytest

from piperisk.cli import main
from piperisk.config import DEFAULTS, RunConfig
from piperisk.errors import ConfigError

SMALL = """\
n_pipes = 1500
seed = 3
threads = 1
n_folds = 2
n_trees = 8
max_depth = 3
learning_rate = 0.3
surv_n_lambda = 5
surv_sample = 40
surv_time_max = 60
"""


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_config(tmp, text, name="run.cfg"):
    path = tmp / name
    path.write_text(text, encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    cfg = write_config(root, SMALL + f"data_dir = {data}\nout_dir = {root / 'out'}\n")
    assert main(["synth", "--config", str(cfg), "--out", str(data)]) == 0
    return root, cfg


def test_defaults_cover_every_key():
    cfg = RunConfig.defaults()
    assert set(cfg.values) == set(DEFAULTS)
    cfg.validate()


def test_parse_overrides_and_comments():
    cfg = RunConfig.parse("# comment\nn_pipes = 12  # trailing\nmodel = logit\nsmote = false\ngap = 3\n")
    assert cfg["n_pipes"] == 12 and cfg["model"] == "logit" and cfg["smote"] is False and cfg["gap"] == 3


def test_empty_value_keeps_default():
    assert RunConfig.parse("n_trees =\n")["n_trees"] == DEFAULTS["n_trees"][0]


@pytest.mark.parametrize(
    "text, key",
    [
        ("colour = red", "colour"),
        ("n_pipes = -5", "n_pipes"),
        ("n_pipes = many", "n_pipes"),
        ("model = svm", "model"),
        ("smote = maybe", "smote"),
        ("horizon_sweep = 1,x", "horizon_sweep"),
        ("just a line", "line 1"),
    ],
)
def test_invalid_config_names_the_problem(text, key):
    with pytest.raises(ConfigError, match=key):
        RunConfig.parse(text)


def test_dump_round_trip():
    cfg = RunConfig.parse(SMALL + "model = logit\nhorizon_sweep = 1,2\n")
    again = RunConfig.parse(cfg.dump())
    assert again.values == cfg.values


def test_synth_writes_four_files(workspace):
    root, _ = workspace
    names = {p.name for p in (root / "data").iterdir()}
    assert {"inventory.csv", "failures.csv", "operations.csv", "truth.json"} <= names


def test_synth_rerun_is_byte_identical(workspace, tmp_path):
    root, cfg = workspace
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    for name in ("inventory.csv", "failures.csv", "operations.csv", "truth.json"):
        assert sha(tmp_path / name) == sha(root / "data" / name)


def test_negative_n_pipes_exits_2(tmp_path, capsys):
    cfg = write_config(tmp_path, "n_pipes = -1\n")
    assert main(["synth", "--config", str(cfg), "--out", str(tmp_path)]) == 2
    assert "n_pipes" in capsys.readouterr().err


def test_bad_arguments_exit_2(workspace):
    _, cfg = workspace
    assert main(["cv", "--config", str(cfg), "--model", "svm"]) == 2
    assert main(["survival", "bogus", "--config", str(cfg)]) == 2
    assert main(["cv"]) == 2


def test_missing_data_exits_3(tmp_path):
    cfg = write_config(tmp_path, f"data_dir = {tmp_path / 'nowhere'}\n")
    assert main(["cv", "--config", str(cfg), "--out", str(tmp_path)]) == 3
    assert main(["survival", "eval", "--config", str(cfg), "--out", str(tmp_path)]) == 3


def test_cv_writes_reports(workspace, tmp_path):
    _, cfg = workspace
    inputs = {p.name: sha(p) for p in (workspace[0] / "data").iterdir()}
    assert main(["cv", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    scores = pd.read_csv(tmp_path / "scores.csv")
    assert list(scores.columns) == ["threshold", "mcc", "precision", "recall", "accuracy", "f1", "auc"]
    assert len(scores) == 1
    sweep = pd.read_csv(tmp_path / "threshold_sweep.csv")
    assert len(sweep) == 101 and "mcc_mean" in sweep.columns
    # inputs are never modified
    assert inputs == {p.name: sha(p) for p in (workspace[0] / "data").iterdir()}


def test_horizon_sweep_emits_one_row_per_k(workspace, tmp_path):
    root, _ = workspace
    cfg = write_config(tmp_path, SMALL + f"data_dir = {root / 'data'}\nhorizon_sweep = 1,2\nn_folds = 1\n")
    assert main(["cv", "--config", str(cfg), "--out", str(tmp_path)]) == 0
    table = pd.read_csv(tmp_path / "horizon_sweep.csv")
    assert list(table["horizon_k"]) == [1, 2]


def test_train_and_explain_logit(workspace, tmp_path):
    _, cfg = workspace
    args = ["--config", str(cfg), "--out", str(tmp_path), "--model", "logit"]
    assert main(["train", *args]) == 0
    assert main(["explain", *args]) == 0
    coef = pd.read_csv(tmp_path / "coefficients.csv")
    assert list(coef.columns) == ["feature", "beta", "abs_beta"]
    assert np.all(np.diff(coef["abs_beta"].to_numpy()) <= 0)
    # model kind mismatch
    assert main(["explain", "--config", str(cfg), "--out", str(tmp_path), "--model", "gbt"]) == 2


def test_train_and_explain_gbt(workspace, tmp_path):
    root, _ = workspace
    cfg = write_config(tmp_path, SMALL + f"data_dir = {root / 'data'}\ndump_attributions = true\n")
    args = ["--config", str(cfg), "--out", str(tmp_path), "--model", "gbt"]
    assert main(["train", *args]) == 0
    assert main(["explain", *args]) == 0
    summary = pd.read_csv(tmp_path / "shap_summary.csv")
    assert np.all(np.diff(summary["mean_abs_shap"].to_numpy()) <= 0)
    values = pd.read_csv(tmp_path / "shap_values.csv")
    features = values.columns[1:-1]
    np.testing.assert_allclose(values[features].abs().mean().to_numpy(),
                               summary.set_index("feature").loc[features, "mean_abs_shap"].to_numpy(), atol=1e-9)


def test_explain_without_model_exits_2(tmp_path):
    cfg = write_config(tmp_path, "model = gbt\n")
    assert main(["explain", "--config", str(cfg), "--out", str(tmp_path / "empty")]) == 2


def test_survival_commands(workspace, tmp_path, capsys):
    _, cfg = workspace
    args = ["--config", str(cfg), "--out", str(tmp_path)]
    assert main(["survival", "eval", *args]) == 0
    ev = pd.read_csv(tmp_path / "survival_eval.csv")
    assert 0.0 <= ev["weighted_brier"][0] <= 1.0
    assert "c_index" in capsys.readouterr().out

    assert main(["survival", "curves", *args]) == 0
    curves = pd.read_csv(tmp_path / "survival_curves.csv")
    assert curves["pipe_id"].nunique() == 40
    for _, g in curves.groupby("pipe_id"):
        assert np.all(np.diff(g["survival"].to_numpy()) <= 1e-12)

    assert main(["survival", "screen", *args]) == 0
    screen = pd.read_csv(tmp_path / "screen.csv")
    assert ((screen["c_index"] > 0.55) == screen["flagged"].astype(bool)).all()

    assert main(["survival", "fit", *args]) == 0
    assert "beta" in json.loads((tmp_path / "survival_model.json").read_text())

    assert main(["survival", "materials", *args]) == 0
    assert len(pd.read_csv(tmp_path / "material_summary.csv")) > 0


def test_cv_is_idempotent(workspace, tmp_path):
    _, cfg = workspace
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["cv", "--config", str(cfg), "--out", str(a), "--horizon", "2"]) == 0
    assert main(["cv", "--config", str(cfg), "--out", str(b), "--horizon", "2", "--threads", "2"]) == 0
    for name in ("scores.csv", "threshold_sweep.csv"):
        assert sha(a / name) == sha(b / name)
