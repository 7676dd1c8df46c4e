import json

import numpy as np
import pytest

from simmh import cli, traceio
from simmh.linsampler import ChainTrace

SMALL_LINEAR = {"synth": {"n": 40, "P": 6, "n_active": 2},
                "sampler": {"T": 3000, "burn_in": 500}}
SMALL_DM = {"synth": {"n": 20, "P": 4, "J": 3, "depth_base": 50, "depth_mean": 10.0,
                      "associations": [[0, 0, 1.0]]},
            "sampler": {"T": 60, "burn_in": 20}}


def write_cfg(tmp_path, obj, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(obj))
    return str(path)


def test_gen_defaults_and_determinism(tmp_path, capsys):
    assert cli.main(["gen", "linear", "--out", str(tmp_path / "a")]) == 0
    assert cli.main(["gen", "linear", "--out", str(tmp_path / "b")]) == 0
    X = traceio.read_columns(tmp_path / "a" / "X.csv")
    assert len(X) == 500 and all(v.shape == (200,) for v in X.values())
    for f in ("X.csv", "y.csv", "truth.json", cli.RESOLVED):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    truth = json.loads((tmp_path / "a" / "truth.json").read_text())
    assert len(truth["active"]) == 5


def test_config_errors_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["gen", "linear", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert "malformed config" in capsys.readouterr().err
    unknown = write_cfg(tmp_path, {"sampler": {"bogus": 1}}, "u.json")
    assert cli.main(["run-linear", "--config", unknown, "--out", str(tmp_path / "o")]) == 2
    neg = write_cfg(tmp_path, {"sampler": {"lam": -1.0}}, "n.json")
    assert cli.main(["run-linear", "--config", neg, "--out", str(tmp_path / "o")]) == 2


def test_run_linear_exact_and_diagnose(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL_LINEAR)
    out = tmp_path / "run"
    assert cli.main(["run-linear", "--config", cfg, "--out", str(out), "--exact"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert 0 <= summary["tv_exact"] <= 1
    stored = json.loads((out / "summary.json").read_text())
    assert stored == summary
    assert len((out / "acf.csv").read_text().splitlines()) == 1 + 51
    assert cli.main(["diagnose", str(out)]) == 0
    again = json.loads((out / "diagnose" / "summary.json").read_text())
    assert again == stored
    # rerunning the resolved config reproduces the trace
    out2 = tmp_path / "rerun"
    assert cli.main(["run-linear", "--config", str(out / cli.RESOLVED), "--out", str(out2)]) == 0
    for f in ("trace.csv", "trace_configs.bin"):
        assert (out / f).read_bytes() == (out2 / f).read_bytes()


def test_no_swap_and_sweep(tmp_path, capsys):
    cfg = dict(SMALL_LINEAR, sweep={"T": 40, "burn_in": 10})
    path = write_cfg(tmp_path, cfg)
    out = tmp_path / "run"
    assert cli.main(["run-linear", "--config", path, "--out", str(out), "--no-swap",
                     "--sweep-lambda", "0.1:1.0:100"]) == 0
    sweep = traceio.read_columns(out / "acceptance_vs_lambda.csv")
    assert sweep["lambda"].shape == (100,)
    assert sweep["lambda"][0] == 0.1 and sweep["lambda"][-1] == 1.0
    assert np.all((sweep["acceptance"] >= 0) & (sweep["acceptance"] <= 1))
    tr = ChainTrace.read(out)
    assert set(np.unique(tr.d_h)) <= {0, 1}


def test_bad_sweep_flag(tmp_path, capsys):
    path = write_cfg(tmp_path, SMALL_LINEAR)
    assert cli.main(["run-linear", "--config", path, "--out", str(tmp_path / "o"),
                     "--sweep-lambda", "1:2"]) == 2


def test_non_empty_output_needs_force(tmp_path, capsys):
    out = tmp_path / "o"
    out.mkdir()
    (out / "keep").write_text("x")
    assert cli.main(["gen", "linear", "--out", str(out)]) == 2
    assert cli.main(["gen", "linear", "--out", str(out), "--force"]) == 0


def test_diagnose_missing_trace(tmp_path, capsys):
    path = write_cfg(tmp_path, SMALL_LINEAR)
    out = tmp_path / "run"
    assert cli.main(["run-linear", "--config", path, "--out", str(out)]) == 0
    (out / "trace_configs.bin").unlink()
    assert cli.main(["diagnose", str(out)]) == 3
    assert "missing trace file" in capsys.readouterr().err
    assert cli.main(["diagnose", str(tmp_path / "nowhere")]) == 3


def test_output_from_environment(tmp_path, capsys, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env"))
    assert cli.main(["gen", "linear", "--seed", "3"]) == 0
    resolved = json.loads((tmp_path / "env" / cli.RESOLVED).read_text())
    assert resolved["seed"] == 3 and resolved["synth"]["seed"] == 3


def test_run_dm_echoes_defaults_and_diagnoses(tmp_path, capsys):
    path = write_cfg(tmp_path, SMALL_DM)
    out = tmp_path / "dm"
    assert cli.main(["run-dm", "--config", path, "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    resolved = json.loads((out / cli.RESOLVED).read_text())
    assert resolved["sampler"]["lambda_move"] == 1.25
    assert resolved["sampler"]["a"] == 1.0 and resolved["sampler"]["b"] == 9.0
    assert resolved["adapt"]["window"] > 0
    assert summary["hyperparameters"]["c"] == 1.0
    assert len(summary["category_acceptance"]) == 3
    assert cli.main(["diagnose", str(out)]) == 0
    assert json.loads((out / "diagnose" / "summary.json").read_text()) == summary
