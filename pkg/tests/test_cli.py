import json

import numpy as np
import pandas as pd
import pytest

from WindESN.config import load_config
from WindESN.file_formats import load_forecast, read_field
from WindESN.wind_esn import COMMAND_REGISTRY, WORK_FILES, build_parser, main


@pytest.fixture
def demo_dir(tmp_path):
    out = tmp_path / "demo"
    assert main(["--seed", "5", "generate-demo", str(out), "--side", "4", "--hours", "300"]) == 0
    return out


def test_every_command_is_registered():
    expected = {"fit-mean", "select-knots", "fit-cov", "cv", "train-esn", "forecast",
                "calibrate", "evaluate", "baseline", "lorenz-study", "power", "generate-demo",
                "periodogram", "diagnostics", "pipeline"}
    assert expected <= set(COMMAND_REGISTRY)
    args = build_parser().parse_args(["--threads", "2", "--set", "esn.ridge=1", "cv",
                                      "--budget", "3"])
    assert args.threads == 2
    assert args.set == ["esn.ridge=1"]
    assert args.budget == 3


def test_library_errors_exit_with_one_line(capsys):
    assert main(["periodogram"]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1
    assert err.startswith("ConfigurationError: data.field is not set")


def test_bad_override_is_reported(capsys, demo_dir):
    code = main(["--config", str(demo_dir / "config.yaml"), "--set", "esn.leak_rate=2",
                 "fit-mean"])
    assert code == 2
    assert "esn.leak_rate" in capsys.readouterr().err


def test_generate_demo_outputs(demo_dir):
    field = read_field(demo_dir / "field.wsf")
    assert field.n_locations == 16
    assert field.n_times == 300
    assert np.all(field.values >= 0)

    config = load_config(demo_dir / "config.yaml")
    assert config.data.field == "field.wsf"
    assert config.splits.train_end == 179
    assert config.splits.validation_end == 239
    assert config.seed == 5
    assert len(pd.read_csv(demo_dir / "turbines.csv")) == 4

    manifest = json.loads((demo_dir / "field.manifest.json").read_text(encoding="utf-8"))
    assert manifest["command"] == "generate-demo"
    assert manifest["seed"] == 5
    assert len(manifest["config_sha256"]) == 64


def test_demo_is_deterministic(tmp_path, demo_dir):
    again = tmp_path / "again"
    other = tmp_path / "other"
    assert main(["--seed", "5", "generate-demo", str(again), "--side", "4", "--hours", "300"]) == 0
    assert main(["--seed", "6", "generate-demo", str(other), "--side", "4", "--hours", "300"]) == 0
    assert (again / "field.wsf").read_bytes() == (demo_dir / "field.wsf").read_bytes()
    assert (other / "field.wsf").read_bytes() != (demo_dir / "field.wsf").read_bytes()


def test_identical_fields_score_zero(demo_dir):
    field = str(demo_dir / "field.wsf")
    out = demo_dir / "self.csv"
    code = main(["--config", str(demo_dir / "config.yaml"), "evaluate", "--forecast", field,
                 "--truth", field, "--window", "all", "--output", str(out)])
    assert code == 0
    table = pd.read_csv(out)
    assert list(table["horizon"]) == [0]
    assert table["mse"].iloc[0] == 0.0
    assert table["n_pairs"].iloc[0] == 16 * 300


def test_fit_mean_and_periodogram_use_work_dir(demo_dir):
    config = str(demo_dir / "config.yaml")
    assert main(["--config", config, "fit-mean"]) == 0
    work = demo_dir / "run"
    residuals = read_field(work / WORK_FILES["residuals"])
    assert residuals.n_times == 300
    assert (work / "harmonics.manifest.json").exists()

    assert main(["--config", config, "periodogram", "--top", "3"]) == 0
    spectrum = pd.read_csv(work / WORK_FILES["periodogram"])
    assert list(spectrum.columns) == ["period", "amplitude"]

    assert main(["--config", config, "diagnostics"]) == 0
    assert (work / "diagnostics_histogram.csv").exists()
    assert len(pd.read_csv(work / "diagnostics_qq.csv")) == 200


@pytest.mark.slow
def test_lorenz_study_table(tmp_path):
    out = tmp_path / "study.csv"
    code = main(["--set", "lorenz.members=2", "lorenz-study", "--etas", "0.2", "1.4",
                 "--replicates", "2", "--output", str(out)])
    assert code == 0
    table = pd.read_csv(out)
    assert list(table.columns) == ["method", "eta", "horizon", "mse_mean", "mse_sd"]
    assert len(table) == 2 * 4 * 3


@pytest.mark.slow
def test_pipeline_beats_persistence(tmp_path):
    demo = tmp_path / "demo"
    assert main(["generate-demo", str(demo)]) == 0
    config = str(demo / "config.yaml")
    assert main(["--config", config, "--threads", "2", "pipeline", "--skip-cv"]) == 0

    work = demo / "run"
    for key in ("harmonics", "residuals", "knots", "covariance", "models", "forecast",
                "calibration", "evaluation", "coverage"):
        assert (work / WORK_FILES[key]).exists(), key

    ensemble, _ = load_forecast(work / WORK_FILES["forecast"])
    assert ensemble.reconstructed.shape[-1] == 100

    table = pd.read_csv(work / WORK_FILES["evaluation"])
    h2 = table[table["horizon"] == 2].set_index("forecast")["mse"]
    assert h2["forecast"] < h2["baseline_persistence"]

    coverage = pd.read_csv(work / WORK_FILES["coverage"])
    assert list(coverage["interval"]) == ["95%", "80%", "60%"]

    # same models and inputs give the same forecast file on one thread
    first = (work / WORK_FILES["forecast"]).read_bytes()
    assert main(["--config", config, "--threads", "1", "forecast"]) == 0
    assert (work / WORK_FILES["forecast"]).read_bytes() == first

    assert main(["--config", config, "power"]) == 0
    power = pd.read_csv(work / WORK_FILES["power"])
    assert set(power["forecast"]) >= {"mean", "q0.975"}
    assert np.all(power["energy_error_kwh"] >= 0)
