import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lookahead_impute.cli import main
from lookahead_impute.consensus import _ipm
from lookahead_impute.exceptions import ConvergenceError

SMALL = """\
n: 4
splits: [30, 10, 20]
missing: {kind: mcar, p: 0.3}
K: 3
mechanisms: [forward_kl, wasserstein]
delta_grid_size: 4
simulations: 2
imputations: 3
bootstrap_resamples: 50
seed: 77
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "small.yaml"
    p.write_text(SMALL)
    return str(p)


def _run(*argv):
    return main([str(a) for a in argv])


def test_smoke_single_run(tmp_path, capsys):
    p = tmp_path / "one.yaml"
    p.write_text("mechanisms: [forward_kl]\nsimulations: 1\nimputations: 1\nbootstrap_resamples: 10\n")
    assert _run("sweep", "--config", p, "--output", tmp_path / "out") == 0
    rows = list(csv.DictReader(open(tmp_path / "out" / "report.csv")))
    assert len(rows) == 10 and {r["mechanism"] for r in rows} == {"forward_kl"}
    assert json.loads(capsys.readouterr().out)["failure_rate"] == 0.0


def test_sweep_artifacts_and_manifest(cfg, tmp_path):
    out = tmp_path / "o"
    assert _run("sweep", "--config", cfg, "--output", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert set(man["files"]) == {"config.yaml", "report.csv", "report.json", "plot_data.csv",
                                 "regrets.csv", "solutions.json", "failures.json"}
    import hashlib
    for name, digest in man["files"].items():
        assert hashlib.sha256((out / name).read_bytes()).hexdigest() == digest
    assert _run("report", "--output", out) == 0
    plot = list(csv.DictReader(open(out / "plot_forward_kl.csv")))
    assert len(plot) == 4 and float(plot[0]["delta_frac"]) == 0.0


def test_sweep_is_deterministic(cfg, tmp_path):
    assert _run("sweep", "--config", cfg, "--output", tmp_path / "a") == 0
    assert _run("sweep", "--config", cfg, "--output", tmp_path / "b", "--jobs", 2) == 0
    a = json.loads((tmp_path / "a" / "manifest.json").read_text())
    b = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert a == b


def test_stagewise_equals_sweep(cfg, tmp_path):
    out = tmp_path / "s"
    assert _run("sweep", "--config", cfg, "--output", out) == 0
    for stage in ("simulate", "mask", "posteriors"):
        assert _run(stage, "--config", cfg, "--output", out, "--sim", 1) == 0
    cell = ["--config", cfg, "--output", out, "--sim", 1, "--mechanism", "wasserstein", "--delta-index", 2]
    for stage in ("solve", "impute", "evaluate"):
        assert _run(stage, *cell) == 0
    staged = [r["regret"] for r in csv.DictReader(open(out / "regrets_1_wasserstein_2.csv"))]
    swept = [r["regret"] for r in csv.DictReader(open(out / "regrets.csv"))
             if r["simulation"] == "1" and r["mechanism"] == "wasserstein" and r["delta_index"] == "2"]
    assert staged == swept and len(staged) == 3


def test_solve_at_zero_delta(cfg, tmp_path, capsys):
    out = tmp_path / "z"
    for stage in ("simulate", "mask", "posteriors"):
        assert _run(stage, "--config", cfg, "--output", out) == 0
    capsys.readouterr()
    assert _run("solve", "--config", cfg, "--output", out, "--mechanism", "forward_kl", "--delta", 0) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["bias_attained"] <= 1e-7


def test_missing_artifact_names_stage(cfg, tmp_path, capsys):
    code = _run("posteriors", "--config", cfg, "--output", tmp_path / "e")
    assert code == 2
    rec = json.loads(capsys.readouterr().err)
    assert "'mask' stage" in rec["message"] and rec["exit_code"] == 2
    assert json.loads((tmp_path / "e" / "error.json").read_text()) == rec
    assert _run("report", "--output", tmp_path / "e") == 2


def test_config_error_exit(tmp_path, capsys):
    p = tmp_path / "bad.yaml"
    p.write_text("n: 4\nsimulatons: 3\n")
    assert _run("sweep", "--config", p, "--output", tmp_path / "x") == 1
    assert "bad.yaml:2" in json.loads(capsys.readouterr().err)["message"]


def test_malformed_csv_exit(tmp_path, capsys):
    data = tmp_path / "r.csv"
    rows = ["date,a,b"] + [f"{i},0.01,0.02" for i in range(9)]
    rows[5] = "4,0.01,oops"
    data.write_text("\n".join(rows) + "\n")
    p = tmp_path / "c.yaml"
    p.write_text(f"source: csv\ncsv_path: {data}\nomega: sample\nsplits: [4, 3, 2]\nK: 2\n"
                 "simulations: 1\nimputations: 2\nmechanisms: [wasserstein]\n")
    assert _run("sweep", "--config", p, "--output", tmp_path / "x") == 2
    assert "row" in json.loads(capsys.readouterr().err)["message"]


def test_solver_budget_exit(cfg, tmp_path, monkeypatch, capsys):
    def broken(*a, **k):
        raise ConvergenceError("forced")

    monkeypatch.setattr(_ipm, "barrier_minimize", broken)
    assert _run("sweep", "--config", cfg, "--output", tmp_path / "f") == 3
    assert json.loads(capsys.readouterr().err)["error"] == "solver_budget"
    fails = json.loads((tmp_path / "f" / "failures.json").read_text())
    assert fails["failure_rate"] > 0 and fails["messages"]


def test_output_env_var(cfg, tmp_path, monkeypatch):
    monkeypatch.setenv("LOOKAHEAD_IMPUTE_OUTPUT", str(tmp_path / "env"))
    assert _run("simulate", "--config", cfg) == 0
    assert (tmp_path / "env" / "truth_0.csv").exists()


def test_console_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "lookahead_impute.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in ("simulate", "mask", "posteriors", "solve", "impute", "evaluate", "sweep", "report"):
        assert sub in res.stdout
