import json

import numpy as np
import pytest

from rkbinn.checkpoint import load_checkpoint
from rkbinn.cli import EXIT_DIVERGED, EXIT_IO, EXIT_MISMATCH, EXIT_OK, EXIT_USAGE, main
from rkbinn.dynamics import read_trajectory_csv


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    assert main(["generate", "--system", "lorenz63", "--n-train", "600", "--n-test", "60",
                 "--spinup", "100", "--seed", "1", "--out", str(out)]) == EXIT_OK
    return out


def test_generate_writes_series_and_manifest(data_dir, tmp_path):
    train = read_trajectory_csv(data_dir / "train.csv")
    test = read_trajectory_csv(data_dir / "test.csv")
    assert train.states.shape == (600, 3) and test.states.shape == (60, 3) and train.h == 0.01
    manifest = json.loads((data_dir / "manifest.json").read_text())
    assert manifest["config"]["system"] == "lorenz63" and manifest["config"]["params"]["rho"] == 28.0
    again = tmp_path / "again"
    main(["generate", "--system", "lorenz63", "--n-train", "600", "--n-test", "60", "--spinup", "100",
          "--seed", "1", "--out", str(again)])
    assert (again / "train.csv").read_bytes() == (data_dir / "train.csv").read_bytes()


def test_usage_errors(tmp_path, capsys):
    assert main(["generate", "--system", "nope", "--out", str(tmp_path)]) == EXIT_USAGE
    assert "valid names" in capsys.readouterr().err
    assert main(["generate", "--out", str(tmp_path)]) == EXIT_USAGE
    cfg = tmp_path / "c.json"
    cfg.write_text('{"bogus": 1}')
    assert main(["generate", "--system", "lorenz63", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_USAGE
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == EXIT_USAGE


def test_missing_data_and_dimension_mismatch(data_dir, tmp_path):
    assert main(["train", "--data", str(tmp_path / "none"), "--system", "lorenz63",
                 "--out", str(tmp_path / "o")]) == EXIT_IO
    assert main(["train", "--data", str(data_dir), "--system", "lorenz96", "--kind", "sr",
                 "--out", str(tmp_path / "o")]) == EXIT_MISMATCH
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint", str(tmp_path / "missing.json")]) == EXIT_IO


def test_sparse_regression_train_and_evaluate(data_dir, tmp_path):
    out = tmp_path / "sr"
    assert main(["train", "--data", str(data_dir), "--kind", "sr", "--out", str(out)]) == EXIT_OK
    assert load_checkpoint(out / "checkpoint.json").xi.shape == (10, 3)
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint", str(out / "checkpoint.json")]) == EXIT_OK
    rows = (out / "report.csv").read_text().splitlines()
    assert len(rows) == 4 and rows[1].startswith("sr,1,0.01,")
    assert (out / "identification.csv").read_text().splitlines()[-1].startswith("MSE,,")


def test_analog_and_oracle_evaluation(data_dir, tmp_path):
    assert main(["train", "--data", str(data_dir), "--kind", "af", "--af-k", "20",
                 "--out", str(tmp_path / "af")]) == EXIT_OK
    assert load_checkpoint(tmp_path / "af" / "checkpoint.json").k == 20
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint",
                 str(tmp_path / "af" / "checkpoint.json")]) == EXIT_OK
    assert main(["evaluate", "--data", str(data_dir), "--kind", "oracle", "--out", str(tmp_path / "or")]) == EXIT_OK
    rmse = json.loads((tmp_path / "or" / "manifest.json").read_text())["rmse"]
    assert rmse == {"1": 0.0, "4": 0.0, "8": 0.0}


def test_neural_train_with_config_override(data_dir, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"epochs": 50, "kind": "mlp"}))
    out = tmp_path / "b"
    assert main(["train", "--data", str(data_dir), "--config", str(cfg), "--kind", "binn1", "--epochs", "2",
                 "--out", str(out)]) == EXIT_OK
    manifest = json.loads((out / "manifest.json").read_text())["config"]
    assert manifest["kind"] == "binn1" and manifest["epochs"] == 2
    assert len((out / "training_log.csv").read_text().splitlines()) == 4  # header, untrained epoch 0, two epochs
    assert load_checkpoint(out / "checkpoint.json").n_blocks == 1
    assert main(["evaluate", "--data", str(data_dir), "--checkpoint", str(out / "checkpoint.json")]) == EXIT_OK
    assert (out / "identification.txt").exists()


def test_latent_smoke(tmp_path):
    out = tmp_path / "lat"
    assert main(["latent", "--observation-map", "identity", "--epochs", "2", "--n-train", "500",
                 "--n-test", "50", "--free-run-steps", "20", "--out", str(out)]) == EXIT_OK
    assert read_trajectory_csv(out / "latent_free_run_aligned.csv").states.shape[1] == 3
    assert np.allclose(json.loads((out / "manifest.json").read_text())["H"], np.vstack([np.eye(3), np.zeros((2, 3))]))
    assert main(["latent", "--d-latent", "2", "--out", str(out)]) == EXIT_MISMATCH


def test_gradcheck_command():
    assert main(["gradcheck"]) == EXIT_OK
    assert main(["gradcheck", "--kinds", "binn4", "--tol", "1e-30"]) == EXIT_DIVERGED
