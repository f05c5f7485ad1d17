import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from pshmm.cli import main
from pshmm.model_sim import read_trajectory_csv


@pytest.fixture
def traj(tmp_path):
    path = tmp_path / "traj.csv"
    assert main(["simulate", "--states", "3", "--dim", "6", "--length", "400", "--seed", "1",
                 "--out", str(path)]) == 0
    return path


def _rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_simulate_writes_trajectory(traj):
    t = read_trajectory_csv(traj)
    assert t.observations.shape == (400, 6) and set(np.unique(t.states)) <= {0, 1, 2}


@pytest.mark.parametrize("model", ["pshmm", "shmm"])
def test_fit_then_predict(traj, tmp_path, model):
    mfile, pfile = tmp_path / "m.json", tmp_path / "p.csv"
    assert main(["fit", "--data", str(traj), "--model", model, "--out", str(mfile)]) == 0
    assert json.loads(mfile.read_text())["kind"] == model
    assert main(["predict", "--stream", str(traj), "--model-file", str(mfile),
                 "--out", str(pfile)]) == 0
    rows = _rows(pfile)
    assert rows[0] == ["t", "flag"] + [f"x_hat_{i}" for i in range(1, 7)]
    assert len(rows) == 1 + 401


def test_predict_online(traj, tmp_path):
    pfile = tmp_path / "p.csv"
    assert main(["predict", "--stream", str(traj), "--warmup", "300", "--gamma", "0.01",
                 "--out", str(pfile)]) == 0
    rows = _rows(pfile)
    assert rows[1][0] == "300" and len(rows) == 1 + 101


def test_predict_needs_model_or_warmup(traj, capsys):
    assert main(["predict", "--stream", str(traj)]) == 2
    assert "error" in capsys.readouterr().err


def test_fit_em(traj, tmp_path):
    out = tmp_path / "em.json"
    assert main(["fit-em", "--data", str(traj), "--restarts", "1", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert np.allclose(np.sum(doc["T"], axis=1), 1.0)


def test_verify_clt(tmp_path):
    out, samples = tmp_path / "clt.json", tmp_path / "z.csv"
    assert main(["verify-clt", "--T", "2", "--N", "300", "--reps", "100", "--cov-triples",
                 "10000", "--out", str(out), "--samples", str(samples)]) == 0
    assert json.loads(out.read_text())["reps"] == 100
    assert len(_rows(samples)) == 101


def test_bench_cli(tmp_path):
    out = tmp_path / "b.json"
    assert main(["bench", "--dim", "8", "--length", "230", "--warmup", "200", "--test-steps",
                 "3", "--methods", "shmm_online", "em", "--out", str(out)]) == 0
    assert set(json.loads(out.read_text())["seconds"]) == {"shmm_online", "em"}


def test_fixture_and_backtest_exit_codes(tmp_path):
    data = tmp_path / "mkt"
    assert main(["fixture", "--out-dir", str(data), "--seed", "7", "--days", "8",
                 "--minutes-per-day", "120"]) == 0
    out = tmp_path / "rep.json"
    assert main(["backtest", "--method", "ar", "--train-days", "5", "--data", str(data),
                 "--out", str(out)]) == 0
    assert json.loads(out.read_text())["valid"] is True
    # one test day only: completes but the report is invalid
    assert main(["backtest", "--method", "ar", "--train-days", "7", "--data", str(data),
                 "--out", str(out)]) == 1
    assert main(["backtest", "--method", "ar", "--train-days", "30", "--data", str(data)]) == 2
    assert main(["backtest", "--data", str(tmp_path / "missing")]) == 2


def test_bad_input_file_exit_code(tmp_path):
    assert main(["fit", "--data", str(tmp_path / "nope.csv")]) == 2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "pshmm", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "backtest" in res.stdout
