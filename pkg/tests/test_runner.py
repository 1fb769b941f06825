import csv
import hashlib
import json
import subprocess
import sys

import numpy as np
import pytest

from rmtqubit.dynamics import ModelParams, ensemble_alpha
from rmtqubit.errors import CheckpointError, ConfigError
from rmtqubit.runner import ExperimentConfig, Interrupted, main, manifest_path, resume, run


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _alpha_config(tmp_path, name="a.csv", **kw):
    base = dict(experiment="alpha", N=4, s=0.2, t_max=2.0, dt=0.1, R=20, seed=7, chunk=5, workers=1, out=str(tmp_path / name))
    base.update(kw)
    return ExperimentConfig(**base)


def test_alpha_csv_and_manifest(tmp_path):
    path = run(_alpha_config(tmp_path))
    rows = _rows(path)
    assert rows[0] == ["t", "alpha_mean", "alpha_stderr"]
    assert len(rows) == 22
    ref = ensemble_alpha(ModelParams(4, 0.2), np.arange(21) * 0.1, 20, 7, workers=1)
    assert np.array_equal([float(r[1]) for r in rows[1:]], ref.alpha)
    manifest = json.loads(manifest_path(path).read_text())
    assert manifest["outputs"]["a.csv"] == hashlib.sha256(path.read_bytes()).hexdigest()
    assert manifest["config"]["N"] == 4
    assert not (tmp_path / "a.csv.ckpt").exists()


def test_omega_adds_z_columns(tmp_path):
    rows = _rows(run(_alpha_config(tmp_path, omega=0.5, R=4)))
    assert rows[0] == ["t", "alpha_mean", "alpha_stderr", "alpha_z_mean", "alpha_z_stderr"]


def test_byte_identical_across_runs_and_workers(tmp_path):
    a = run(_alpha_config(tmp_path, "one.csv")).read_bytes()
    b = run(_alpha_config(tmp_path, "two.csv")).read_bytes()
    c = run(_alpha_config(tmp_path, "three.csv", workers=3)).read_bytes()
    assert a == b == c


def test_interrupt_and_resume(tmp_path):
    whole = run(_alpha_config(tmp_path, "whole.csv", R=200, chunk=25)).read_bytes()
    cfg = _alpha_config(tmp_path, "part.csv", R=200, chunk=25)
    with pytest.raises(Interrupted):
        run(cfg, stop_after_chunks=2)
    state = json.loads((tmp_path / "part.csv.ckpt" / "state.json").read_text())
    assert len(state["chunks"]) == 2
    assert not (tmp_path / "part.csv").exists()
    out = resume(tmp_path / "part.csv", {"workers": 2})
    assert out.read_bytes() == whole


def test_resume_rejections(tmp_path):
    cfg = _alpha_config(tmp_path, "p.csv")
    with pytest.raises(Interrupted):
        run(cfg, stop_after_chunks=1)
    with pytest.raises(CheckpointError):
        resume(tmp_path / "p.csv", {"R": 40})
    with pytest.raises(CheckpointError):
        run(_alpha_config(tmp_path, "p.csv", seed=8))
    with pytest.raises(CheckpointError):
        resume(tmp_path / "missing.csv")
    chunk = next((tmp_path / "p.csv.ckpt").glob("*.npy"))
    chunk.write_bytes(chunk.read_bytes()[:-8] + b"\0" * 8)
    with pytest.raises(CheckpointError):
        resume(tmp_path / "p.csv")


def test_config_round_trip_and_validation():
    cfg = ExperimentConfig("nm-sweep", N=8, s_values=[0.1, 0.2], R=3)
    assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "alpha", "bogus": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig("alpha", N=0)
    with pytest.raises(ConfigError):
        ExperimentConfig("alpha", s=-1.0)
    with pytest.raises(ConfigError):
        ExperimentConfig("figure", figure_id=9)


def test_cli_outputs_and_exit_codes(tmp_path, capsys):
    out = tmp_path / "w.csv"
    assert main(["weingarten", "--N", "3", "--out", str(out)]) == 0
    rows = _rows(out)
    assert rows[0][:2] == ["label", "partition"] and len(rows) == 16
    assert rows[8][3] == "30"
    assert main(["alpha", "--N", "0", "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["resume", "--out", str(tmp_path / "nothing.csv")]) == 4
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["alpha", "--config", str(bad)]) == 2
    assert main(["lr-strong", "--N", "8", "--s", "0.1", "--t-max", "0.5", "--dt", "0.1", "--out", str(tmp_path / "l.csv")]) == 0
    assert _rows(tmp_path / "l.csv")[0] == ["t", "value", "stderr", "alpha_lr"]


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"experiment": "alpha0-exact", "N": 3, "t_max": 1.0, "dt": 0.5}))
    out = tmp_path / "e.csv"
    assert main(["alpha0-exact", "--config", str(conf), "--N", "5", "--out", str(out)]) == 0
    assert json.loads(manifest_path(out).read_text())["config"]["N"] == 5
    assert len(_rows(out)) == 4


def test_workers_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("RMTQUBIT_WORKERS", "2")
    a = run(_alpha_config(tmp_path, "env.csv", workers=None, R=6)).read_bytes()
    monkeypatch.setenv("RMTQUBIT_WORKERS", "zero")
    with pytest.raises(ConfigError):
        run(_alpha_config(tmp_path, "env2.csv", workers=None, R=6))
    assert a == run(_alpha_config(tmp_path, "env3.csv", R=6)).read_bytes()


def test_module_entry_point(tmp_path):
    out = tmp_path / "m.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "rmtqubit", "lr-weak", "--N", "4", "--s", "0.5", "--t-max", "1", "--dt", "0.5", "--R", "3", "--out", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert _rows(out)[0] == ["t", "value", "stderr", "purity_lr", "purity_elr", "g"]
    meta = json.loads(manifest_path(out).read_text())["meta"]
    assert meta["tau_H"] == 8 and meta["lambda"] == pytest.approx(0.5)


def test_figure_one(tmp_path):
    out = tmp_path / "f1.csv"
    assert main(["figure", "--id", "1", "--t-max", "2", "--dt", "0.5", "--out", str(out)]) == 0
    header = _rows(out)[0]
    assert header[0] == "t" and len(header) == 5
