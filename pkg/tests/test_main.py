import shutil
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from fusion_prognostics.main import run
from fusion_prognostics.storage.cmapss import CMAPSS_COLUMNS, write_cmapss

tests_base_dir = Path(__file__).parent
small_config = str(tests_base_dir / "assets/small.yaml")
study_config = str(tests_base_dir / "assets/study.yaml")


def invoke(*args: str):
    return run(["--config", small_config, *args])


def invoke_study(*args: str):
    return run(["--config", study_config, *args])


@pytest.fixture(scope="module")
def simulated(tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("simulated")
    code = invoke("simulate", "--out", str(out))
    assert code == 0
    return out


@pytest.fixture(scope="module")
def fitted(simulated, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("fitted")
    code = invoke("fit-offline", "--data", str(simulated), "--out", str(out))
    assert code == 0
    return out


@pytest.fixture(scope="module")
def predicted(simulated, fitted, tmp_path_factory) -> Path:
    out = tmp_path_factory.mktemp("predicted")
    code = invoke(
        "predict", "--model", str(fitted), "--data", str(simulated), "--out", str(out), "--percentile", "50"
    )
    assert code == 0
    return out


class TestSimulate:
    def test_writes_the_dataset(self, simulated):
        for name in ("signals.csv", "ttf.csv", "truth.csv", "sensors.csv", "config.yaml", "manifest.json"):
            assert (simulated / name).exists()
        truth = pd.read_csv(simulated / "truth.csv")
        assert len(truth) == 16
        assert (truth["split"] == "train").sum() == 12

    def test_same_seed_same_bytes(self, simulated, tmp_path):
        code = invoke("simulate", "--out", str(tmp_path))

        assert code == 0
        assert (tmp_path / "signals.csv").read_bytes() == (simulated / "signals.csv").read_bytes()
        assert (tmp_path / "manifest.json").read_bytes() == (simulated / "manifest.json").read_bytes()

    def test_seed_option(self, simulated, tmp_path):
        code = run(["--config", small_config, "--seed", "7", "simulate", "--out", str(tmp_path)])

        assert code == 0
        assert (tmp_path / "signals.csv").read_bytes() != (simulated / "signals.csv").read_bytes()

    def test_unknown_regime(self, tmp_path):
        code = invoke("simulate", "--out", str(tmp_path), "--regime", "snr_0_1")

        assert code == 1


class TestErrors:
    def test_unknown_configuration_key(self, tmp_path, capsys):
        config = str(tests_base_dir / "assets/unknown_key.yaml")

        code = run(["--config", config, "simulate", "--out", str(tmp_path)])

        assert code == 1
        assert '"exit_code": 1' in capsys.readouterr().err

    def test_dataset_without_signals(self, tmp_path, capsys):
        data = tmp_path / "data"
        data.mkdir()

        code = invoke("fit-offline", "--data", str(data), "--out", str(tmp_path / "out"))

        assert code == 2
        assert '"exit_code": 2' in capsys.readouterr().err

    def test_t_star_and_percentile_together(self, simulated, fitted, tmp_path):
        code = invoke(
            "predict", "--model", str(fitted), "--data", str(simulated), "--out", str(tmp_path),
            "--t-star", "0.3", "--percentile", "50",
        )

        assert code == 1

    def test_missing_option(self):
        code = invoke("simulate")

        assert code == 1

    def test_missing_command(self):
        assert invoke() == 1

    def test_percentile_outside_range(self, simulated, fitted, tmp_path):
        code = invoke(
            "predict", "--model", str(fitted), "--data", str(simulated), "--out", str(tmp_path), "--percentile", "100"
        )

        assert code == 1

    def test_corrupt_fit_summary(self, simulated, fitted, tmp_path, capsys):
        model = tmp_path / "model"
        shutil.copytree(fitted, model)
        (model / "fit.json").write_text("{bad", encoding="utf-8")

        code = invoke(
            "predict", "--model", str(model), "--data", str(simulated), "--out", str(tmp_path / "out"),
            "--percentile", "50",
        )

        assert code == 2
        assert '"exit_code": 2' in capsys.readouterr().err

    def test_unexpected_failure(self, tmp_path, monkeypatch, capsys):
        def broken(app, args):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr("fusion_prognostics.main._report", broken)

        code = invoke("report", "--run", str(tmp_path))

        assert code == 3
        err = capsys.readouterr().err
        assert '"exit_code": 3' in err
        assert '"kind": "RuntimeError"' in err


class TestWorkflow:
    def test_fit_offline_outputs(self, fitted):
        for name in ("params.csv", "groups.csv", "gamma.csv", "trace.csv", "selection.csv", "fit.json", "accuracy.csv"):
            assert (fitted / name).exists()
        assert len(pd.read_csv(fitted / "gamma.csv")) == 12

    def test_predictions(self, predicted):
        predictions = pd.read_csv(predicted / "predictions.csv")

        assert len(predictions) == 4
        assert (predictions["rul"] >= 0).all()
        assert set(predictions["percentile"]) == {50}

    def test_evaluate(self, predicted, tmp_path):
        code = invoke("evaluate", "--preds", str(predicted), "--out", str(tmp_path))

        assert code == 0
        summary = pd.read_csv(tmp_path / "error_summary.csv")
        assert summary["n"].tolist() == [4]

    def test_evaluate_with_truth(self, simulated, predicted, tmp_path):
        code = invoke(
            "evaluate", "--preds", str(predicted), "--out", str(tmp_path), "--truth", str(simulated / "truth.csv")
        )

        assert code == 0
        assert (tmp_path / "error_summary.csv").exists()

    def test_report(self, fitted):
        code = invoke("report", "--run", str(fitted))

        assert code == 0
        content = (fitted / "report.md").read_text()
        assert content.startswith("# fit-offline report")
        assert "## Sensor selection" in content


def degradation_records(lengths, seed=0) -> pd.DataFrame:
    """C-MAPSS records whose sensors drift quadratically towards the end of each unit's life."""
    rng = np.random.default_rng(seed)
    n_readings = len(CMAPSS_COLUMNS) - 2
    slopes = rng.uniform(0.5, 2.0, size=n_readings)
    rows = []
    for unit, length in enumerate(lengths, start=1):
        for cycle in range(1, length + 1):
            readings = slopes * (cycle / length) ** 2 + 0.05 * rng.normal(size=n_readings)
            rows.append([unit, cycle] + readings.tolist())
    return pd.DataFrame(rows, columns=CMAPSS_COLUMNS)


@pytest.fixture(scope="module")
def ingested(tmp_path_factory) -> Path:
    files = tmp_path_factory.mktemp("cmapss_files")
    write_cmapss(degradation_records(list(range(30, 42))), files / "train.txt")
    write_cmapss(degradation_records([10, 14, 18, 22], seed=1), files / "test.txt")
    (files / "rul.txt").write_text("25\n20\n15\n10\n", encoding="utf-8")

    out = tmp_path_factory.mktemp("ingested")
    code = invoke_study(
        "ingest-cmapss", "--train", str(files / "train.txt"), "--test", str(files / "test.txt"),
        "--rul", str(files / "rul.txt"), "--out", str(out),
    )
    assert code == 0
    return out


class TestStudies:
    def test_cv(self, simulated, tmp_path, capsys):
        code = invoke_study("cv", "--data", str(simulated), "--out", str(tmp_path))

        assert code == 0
        table = pd.read_csv(tmp_path / "cv_table.csv")
        assert len(table) == 2
        selection = pd.read_csv(tmp_path / "cv_selection.csv")
        assert selection["lambda"].item() in (0.0, 0.05)
        assert '"alpha": 1.0' in capsys.readouterr().out

    def test_simulation_study(self, tmp_path):
        code = invoke_study("study", "--out", str(tmp_path))

        assert code == 0
        for name in ("accuracy.csv", "selection.csv", "top_sensors.csv", "error_summary.csv", "report.md"):
            assert (tmp_path / name).exists()
        predictions = pd.read_csv(tmp_path / "snr_8_11" / "predictions.csv")
        assert len(predictions) == 4
        assert (predictions["rul"] >= 0).all()

    def test_ingest_cmapss(self, ingested):
        truth = pd.read_csv(ingested / "truth.csv")

        assert len(truth) == 16
        assert (truth["split"] == "test").sum() == 4
        assert truth.loc[truth["split"] == "test", "true_rul"].tolist() == [25, 20, 15, 10]
        assert pd.read_csv(ingested / "signals.csv")["sensor_id"].nunique() == 3

    def test_cmapss_study(self, ingested, tmp_path):
        code = invoke_study("cmapss", "--data", str(ingested), "--out", str(tmp_path))

        assert code == 0
        predictions = pd.read_csv(tmp_path / "predictions.csv")
        assert len(predictions) == 4
        assert (predictions["rul"] >= 0).all()
        assert (tmp_path / "report.md").exists()
