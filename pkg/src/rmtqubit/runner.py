"""Command-line entry point and experiment runner.

Each subcommand writes a CSV (header row, ``.`` decimals) and a JSON
manifest next to it. Monte Carlo runs store finished realization chunks in
``<out>.ckpt/`` so an interrupted run can be resumed; because realization
``k`` always draws from stream ``(seed, k)``, the resumed output is
byte-identical to an uninterrupted one.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import shutil
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import STREAM_STRIDE, ModelParams, default_workers, realization_traces, trace_from_stack
from .errors import CheckpointError, ConfigError, NumericalError
from .haar_moments import c_factors, ctm_vectors, enumerate_partitions
from .linear_response import (
    alpha2,
    alpha2_largeN,
    alpha_lr_strong,
    alpha_weak,
    composite_alpha,
    g_of_t,
    lambda_from_s,
    p_elr,
    p_lr,
)
from .markovianity import depolarizing_samples, detect_transition, nm_from_stack, noise_generator
from .spectral_oracles import alpha0_exact, alpha0_largeN

log = logging.getLogger("rmtqubit")

EXPERIMENTS = ("alpha", "alpha0-exact", "lr-strong", "lr-weak", "nm-sweep", "weingarten", "figure")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
DEFAULT_S_GRID = tuple(round(0.05 * k, 2) for k in range(17))


GENERIC_DEFAULTS = {"N": 64, "R": 100, "t_max": 10.0, "dt": 0.01}


@dataclass
class ExperimentConfig:
    """One experiment. ``None`` for N, R, t_max or dt means "default".

    Plain experiments fill the generic defaults at construction; figures
    keep ``None`` and fall back to their own per-figure defaults.
    """

    experiment: str
    N: int | None = None
    s: float = 0.0
    omega: float = 0.0
    t_max: float | None = None
    dt: float | None = None
    R: int | None = None
    seed: int = 0
    workers: int | None = None
    out: str | None = None
    s_values: list | None = None
    lam: float | None = None
    tau_h: float | None = None
    figure_id: int | None = None
    eps: float = 0.01
    chunk: int = 25

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}")
        if self.experiment != "figure":
            for name, value in GENERIC_DEFAULTS.items():
                if getattr(self, name) is None:
                    setattr(self, name, value)
        elif self.figure_id not in (1, 2, 3, 4, 5):
            raise ConfigError("figure needs --id in 1..5")
        for name in ("N", "R", "seed", "chunk"):
            v = getattr(self, name)
            if v is not None and (not isinstance(v, int) or isinstance(v, bool)):
                raise ConfigError(f"{name} must be an integer, got {v!r}")
        if (self.N is not None and self.N < 1) or (self.R is not None and self.R < 1) or self.chunk < 1 or self.seed < 0:
            raise ConfigError("N, R and chunk must be positive and seed non-negative")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.t_max is not None and not (self.t_max >= 0 and math.isfinite(self.t_max)):
            raise ConfigError("t_max must be finite and non-negative")
        if self.s_values is not None:
            self.s_values = [float(x) for x in self.s_values]
        ModelParams(self.N or 1, self.s, self.omega)

    def pick(self, name: str, default):
        value = getattr(self, name)
        return default if value is None else value

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def result_key(self) -> dict:
        """Fields that determine the numbers (worker count and paths excluded)."""
        d = self.to_dict()
        d.pop("workers")
        d.pop("out")
        return d

    def times(self) -> np.ndarray:
        n = int(round(self.t_max / self.dt))
        return self.dt * np.arange(n + 1)

    def output_path(self) -> Path:
        return Path(self.out if self.out else f"{self.experiment}.csv")


@dataclass
class Table:
    columns: list
    rows: list
    meta: dict = field(default_factory=dict)


# ---- serialization -----------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer, str)):
        return str(x)
    return repr(float(x))


def _csv_bytes(table: Table) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(table.columns)
    for row in table.rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue().encode("utf-8")


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(data)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return float(x) if math.isfinite(x) else str(float(x))
    if isinstance(x, np.integer):
        return int(x)
    return x


def write_outputs(config: ExperimentConfig, table: Table, started: float) -> Path:
    path = config.output_path()
    path.parent.mkdir(parents=True, exist_ok=True)
    data = _csv_bytes(table)
    _atomic_write(path, data)
    manifest = {
        "config": config.to_dict(),
        "version": __version__,
        "wall_time_s": round(time.time() - started, 3),
        "outputs": {path.name: _sha256(data)},
        "meta": table.meta,
    }
    _atomic_write(manifest_path(path), json.dumps(_jsonable(manifest), indent=2, sort_keys=True).encode())
    return path


def manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# ---- checkpointed Monte Carlo ------------------------------------------


class Checkpoint:
    """Per-chunk ``.npy`` files plus a state file with their checksums."""

    def __init__(self, out: Path, config: ExperimentConfig, must_exist: bool = False):
        self.dir = out.with_name(out.name + ".ckpt")
        self.state_file = self.dir / "state.json"
        self.config = config
        if self.state_file.exists():
            try:
                state = json.loads(self.state_file.read_text())
            except (OSError, ValueError) as exc:
                raise CheckpointError(f"unreadable checkpoint state {self.state_file}: {exc}") from exc
            if state.get("result_key") != _jsonable(config.result_key()):
                raise CheckpointError(f"checkpoint in {self.dir} was written for a different configuration")
            self.chunks = state.get("chunks", {})
        elif must_exist:
            raise CheckpointError(f"no checkpoint manifest at {self.state_file}")
        else:
            self.chunks = {}

    def _save_state(self):
        state = {"config": self.config.to_dict(), "result_key": self.config.result_key(), "chunks": self.chunks}
        _atomic_write(self.state_file, json.dumps(_jsonable(state), indent=1, sort_keys=True).encode())

    def load(self, name: str):
        if name not in self.chunks:
            return None
        path = self.dir / name
        try:
            data = path.read_bytes()
        except OSError as exc:
            raise CheckpointError(f"checkpoint chunk {path} is missing") from exc
        if _sha256(data) != self.chunks[name]:
            raise CheckpointError(f"checkpoint chunk {path} fails its checksum")
        return np.load(io.BytesIO(data), allow_pickle=False)

    def store(self, name: str, arr: np.ndarray):
        self.dir.mkdir(parents=True, exist_ok=True)
        buf = io.BytesIO()
        np.save(buf, arr, allow_pickle=False)
        data = buf.getvalue()
        _atomic_write(self.dir / name, data)
        self.chunks[name] = _sha256(data)
        self._save_state()

    def remove(self):
        shutil.rmtree(self.dir, ignore_errors=True)


class Interrupted(Exception):
    """Raised by :func:`run` when ``stop_after_chunks`` is reached."""


class _ChunkBudget:
    def __init__(self, limit):
        self.left = limit

    def spend(self):
        if self.left is None:
            return
        if self.left <= 0:
            raise Interrupted("chunk budget exhausted")
        self.left -= 1


def _mc_stack(config, params, times, offset, key, ckpt, budget, workers) -> np.ndarray:
    parts = []
    for start in range(0, config.R, config.chunk):
        stop = min(config.R, start + config.chunk)
        name = f"{key}_{start:08d}.npy"
        arr = ckpt.load(name)
        if arr is None:
            budget.spend()
            log.info("%s: realizations %d-%d", key, start, stop - 1)
            arr = realization_traces(params, times, config.seed, range(offset + start, offset + stop), workers)
            ckpt.store(name, arr)
        parts.append(arr)
    return np.concatenate(parts)


def _workers(config) -> int:
    if config.workers is not None:
        if config.workers < 1:
            raise ConfigError("workers must be at least 1")
        return config.workers
    return default_workers()


# ---- experiments ---------------------------------------------------------


def _exp_alpha(config, ckpt, budget) -> Table:
    params = ModelParams(config.N, config.s, config.omega)
    t = config.times()
    stack = _mc_stack(config, params, t, 0, "alpha", ckpt, budget, _workers(config))
    tr = trace_from_stack(params, t, stack, {"seed": config.seed})
    cols = ["t", "alpha_mean", "alpha_stderr"]
    series = [t, tr.alpha, tr.stderr]
    if tr.extra:
        cols += ["alpha_z_mean", "alpha_z_stderr"]
        series += [tr.extra["alpha_z"], tr.extra["alpha_z_stderr"]]
    return Table(cols, list(zip(*series)), tr.meta)


def _exp_alpha0(config, ckpt, budget) -> Table:
    t = config.times()
    a = alpha0_exact(t, config.N)
    return Table(["t", "value", "stderr"], [(x, y, None) for x, y in zip(t, a)], {"N": config.N})


def _exp_lr_strong(config, ckpt, budget) -> Table:
    t = config.times()
    if config.s == 0:
        a = alpha0_exact(t, config.N)
        return Table(["t", "value", "stderr", "alpha_lr"], [(x, y, None, y) for x, y in zip(t, a)], {"tail": "none"})
    comp = composite_alpha(t, config.s, config.N, master_seed=config.seed)
    lr = alpha_lr_strong(t, config.s, config.N)
    rows = [(x, y, None, z) for x, y, z in zip(t, comp.alpha, lr)]
    return Table(["t", "value", "stderr", "alpha_lr"], rows, comp.meta)


def _exp_lr_weak(config, ckpt, budget) -> Table:
    t = config.times()
    tau = float(config.tau_h) if config.tau_h is not None else 2.0 * config.N
    lam = config.lam if config.lam is not None else lambda_from_s(config.s, config.N)
    rows = list(zip(t, alpha_weak(t, lam, tau), [None] * t.size, p_lr(t, lam, tau), p_elr(t, lam, tau), g_of_t(t, tau)))
    return Table(["t", "value", "stderr", "purity_lr", "purity_elr", "g"], rows, {"lambda": lam, "tau_H": tau})


def _s_grid(config) -> list:
    return list(config.s_values) if config.s_values is not None else list(DEFAULT_S_GRID)


def _sweep(config, N, omega, ckpt, budget, tag):
    s_values = _s_grid(config)
    if any(b <= a for a, b in zip(s_values, s_values[1:])):
        raise ConfigError("s values must be strictly ascending")
    times = np.arange(0, int(round(10.0 / config.dt)) + 1) * config.dt
    window = (0.0, 10.0)
    out = []
    for i, s in enumerate(s_values):
        params = ModelParams(N, float(s), omega)
        stack = _mc_stack(config, params, times, i * STREAM_STRIDE, f"{tag}_s{i:03d}", ckpt, budget, _workers(config))
        out.append(nm_from_stack(times, depolarizing_samples(stack), window, noise_generator(config.seed, i)))
    return s_values, out


def _exp_nm_sweep(config, ckpt, budget) -> Table:
    s_values, res = _sweep(config, config.N, config.omega, ckpt, budget, "nm")
    m = [r.measure for r in res]
    rows = [(s, r.measure, r.stderr, r.noise_floor, r.consistent_with_zero) for s, r in zip(s_values, res)]
    meta = {
        "s_crit": detect_transition(s_values, m, config.eps),
        "eps": config.eps,
        "window": [0.0, 10.0],
        "alpha_reduction": "depolarizing mean of xx and yy entries" if config.omega else "zz entry",
    }
    return Table(["s", "value", "stderr", "noise_floor", "consistent_with_zero"], rows, meta)


def _exp_weingarten(config, ckpt, budget) -> Table:
    c = c_factors(config.N)
    v1, v2 = ctm_vectors(config.N)
    rows = []
    for p in enumerate_partitions():
        rows.append((p.label, p.describe(), p.multiplicity(2 * config.N), str(c.at(p.label)), str(v1.at(p.label)), str(v2.at(p.label))))
    return Table(["label", "partition", "multiplicity", "c_factor", "ctm1", "ctm2"], rows, {"N": config.N})


# desk-scale defaults per figure
FIGURE_DEFAULTS = {
    1: {"N_list": (2, 8, 32), "t_max": 10.0, "dt": 0.05},
    2: {"N_list": (16, 128, 1024), "t_max": 6.0, "dt": 0.1},
    3: {"N": 64, "s_list": (0.1, 0.2, 0.4), "R": 200, "t_max": 10.0, "dt": 0.1},
    4: {"N_list": (64, 256), "R": 100, "dt": 0.01},
    5: {"N": 128, "omega_list": (0.0, 0.5, 1.0), "R": 100, "dt": 0.01},
}


def _grid(t_max, dt):
    return dt * np.arange(int(round(t_max / dt)) + 1)


def _exp_figure(config, ckpt, budget) -> Table:
    fid = config.figure_id
    d = FIGURE_DEFAULTS[fid]
    if fid in (1, 2):
        t = _grid(config.pick("t_max", d["t_max"]), config.pick("dt", d["dt"]))
        n_list = d["N_list"] if config.N is None else (config.N,)
        cols, series = ["t"], [t]
        for n in n_list:
            cols.append(f"alpha0_N{n}" if fid == 1 else f"alpha2_N{n}")
            series.append(alpha0_exact(t, n) if fid == 1 else np.array([alpha2(x, n) for x in t]))
        cols.append("alpha0_largeN" if fid == 1 else "alpha2_largeN")
        series.append(alpha0_largeN(t) if fid == 1 else np.array([alpha2_largeN(x) for x in t]))
        return Table(cols, list(zip(*series)), {"figure": fid, "N_list": list(n_list)})
    R = config.pick("R", d["R"])
    if fid == 3:
        N = config.pick("N", d["N"])
        t = _grid(config.pick("t_max", d["t_max"]), config.pick("dt", d["dt"]))
        sub = dataclasses.replace(config, R=R)
        cols, series, meta = ["t"], [t], {"figure": 3, "N": N, "R": R, "t_cut": {}}
        for i, s in enumerate(d["s_list"]):
            params = ModelParams(N, s)
            stack = _mc_stack(sub, params, t, i * STREAM_STRIDE, f"fig3_s{i}", ckpt, budget, _workers(config))
            tr = trace_from_stack(params, t, stack)
            comp = composite_alpha(t, s, N, master_seed=config.seed)
            lr = alpha_lr_strong(t, s, N)
            cols += [f"mc_s{s}", f"mc_stderr_s{s}", f"lr_s{s}", f"composite_s{s}"]
            series += [tr.alpha, tr.stderr, lr, comp.alpha]
            meta["t_cut"][str(s)] = comp.meta["t_cut"]
        return Table(cols, list(zip(*series)), meta)
    sub = dataclasses.replace(config, R=R, dt=config.pick("dt", d["dt"]))
    cols, series, meta = ["s"], [np.array(_s_grid(config))], {"figure": fid, "R": R, "s_crit": {}}
    if fid == 4:
        variants = [(n, config.omega, f"N{n}") for n in (d["N_list"] if config.N is None else (config.N,))]
    else:
        variants = [(config.pick("N", d["N"]), w, f"omega{w}") for w in d["omega_list"]]
    for N, omega, tag in variants:
        s_values, res = _sweep(sub, N, omega, ckpt, budget, f"fig{fid}_{tag}")
        m = [r.measure for r in res]
        cols += [f"M_{tag}", f"stderr_{tag}", f"noise_floor_{tag}"]
        series += [m, [r.stderr for r in res], [r.noise_floor for r in res]]
        meta["s_crit"][tag] = detect_transition(s_values, m, config.eps)
    return Table(cols, list(zip(*series)), meta)


_DISPATCH = {
    "alpha": _exp_alpha,
    "alpha0-exact": _exp_alpha0,
    "lr-strong": _exp_lr_strong,
    "lr-weak": _exp_lr_weak,
    "nm-sweep": _exp_nm_sweep,
    "weingarten": _exp_weingarten,
    "figure": _exp_figure,
}


def run(config: ExperimentConfig, stop_after_chunks: int | None = None, resume: bool = False) -> Path:
    """Run one experiment and write its CSV and manifest.

    With ``stop_after_chunks`` the run raises :class:`Interrupted` once that
    many new Monte Carlo chunks have been computed, leaving a checkpoint.
    """
    started = time.time()
    out = config.output_path()
    out.parent.mkdir(parents=True, exist_ok=True)
    ckpt = Checkpoint(out, config, must_exist=resume)
    table = _DISPATCH[config.experiment](config, ckpt, _ChunkBudget(stop_after_chunks))
    path = write_outputs(config, table, started)
    ckpt.remove()
    return path


def resume(out, overrides: dict | None = None, stop_after_chunks: int | None = None) -> Path:
    """Continue the interrupted run whose output path is ``out``.

    ``overrides`` may only change the worker count; anything else that
    differs from the stored configuration is rejected.
    """
    out = Path(out)
    state_file = out.with_name(out.name + ".ckpt") / "state.json"
    if not state_file.exists():
        raise CheckpointError(f"no checkpoint manifest at {state_file}")
    try:
        stored = json.loads(state_file.read_text())["config"]
    except (OSError, ValueError, KeyError) as exc:
        raise CheckpointError(f"unreadable checkpoint state {state_file}: {exc}") from exc
    config = ExperimentConfig.from_dict(stored)
    for key, value in (overrides or {}).items():
        if key == "workers":
            config.workers = value
        elif key != "out" and stored.get(key) != value:
            raise CheckpointError(f"resume cannot change {key!r} ({stored.get(key)!r} -> {value!r})")
    config.out = str(out)
    return run(config, stop_after_chunks=stop_after_chunks, resume=True)


# ---- command line --------------------------------------------------------

_FLAG_FIELDS = {
    "N": int,
    "s": float,
    "omega": float,
    "t_max": float,
    "dt": float,
    "R": int,
    "seed": int,
    "workers": int,
    "out": str,
}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--N", type=int, help="environment dimension")
    p.add_argument("--s", type=float, help="strength of the environment Hamiltonian")
    p.add_argument("--omega", type=float, help="qubit level splitting")
    p.add_argument("--t-max", dest="t_max", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--R", type=int, help="number of realizations")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="worker processes (env RMTQUBIT_WORKERS)")
    p.add_argument("--out", help="output CSV path")
    p.add_argument("--config", help="JSON config file; flags override it")
    p.add_argument("--chunk", type=int, help="realizations per checkpoint chunk")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rmtqubit", description="Qubit decoherence in random-matrix environments.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        p = sub.add_parser(name)
        _add_common(p)
        if name == "nm-sweep" or name == "figure":
            p.add_argument("--s-values", dest="s_values", help="comma-separated ascending s grid")
            p.add_argument("--eps", type=float, help="transition threshold")
        if name == "lr-weak":
            p.add_argument("--lambda", dest="lam", type=float, help="coupling (default 1/(sN))")
            p.add_argument("--tau-h", dest="tau_h", type=float, help="Heisenberg time (default 2N)")
        if name == "figure":
            p.add_argument("--id", dest="figure_id", type=int, required=True, choices=(1, 2, 3, 4, 5))
    p = sub.add_parser("resume")
    _add_common(p)
    return parser


def _load_config_file(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except ValueError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _parse_s_values(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad --s-values {text!r}") from exc


def _cli_overrides(args) -> dict:
    out = {}
    for name in list(_FLAG_FIELDS) + ["chunk", "lam", "tau_h", "figure_id", "eps"]:
        v = getattr(args, name, None)
        if v is not None:
            out[name] = v
    if getattr(args, "s_values", None):
        out["s_values"] = _parse_s_values(args.s_values)
    return out


def config_from_args(args) -> ExperimentConfig:
    data = _load_config_file(args.config) if args.config else {}
    if data.get("experiment", args.command) != args.command:
        raise ConfigError(f"config file is for {data['experiment']!r}, not {args.command!r}")
    data["experiment"] = args.command
    overrides = _cli_overrides(args)
    data.update(overrides)
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "resume":
            if not args.out:
                raise ConfigError("resume needs --out of the interrupted run")
            path = resume(args.out, _cli_overrides(args))
        else:
            path = run(config_from_args(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
