"""Backflow measure of non-Markovianity for isotropic qubit channels.

For a channel that shrinks the Bloch sphere by ``alpha(t)``, the trace
distance of the best state pair follows ``|alpha|``, and the measure is
``M = 2 * integral of d(alpha)/dt over intervals where it is positive``.
On sampled data this is computed without differentiation, as twice the sum
of the positive increments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dynamics import STREAM_STRIDE, AlphaTrace, ModelParams, default_workers, realization_traces
from .ensembles import RngStream
from .errors import ConfigError

__all__ = [
    "NMResult",
    "SweepResult",
    "nm_measure",
    "nm_of_series",
    "nm_from_stack",
    "nm_sweep",
    "depolarizing_samples",
    "noise_generator",
    "detect_transition",
]

DEFAULT_WINDOW = (0.0, 10.0)
NOISE_DRAWS = 32
# noise streams live far above the realization streams
NOISE_STREAM_BASE = 1 << 62


@dataclass
class NMResult:
    measure: float
    rise_segments: list
    window: tuple
    stderr: float | None = None
    noise_floor: float | None = None

    @property
    def consistent_with_zero(self) -> bool | None:
        if self.noise_floor is None:
            return None
        return self.measure <= self.noise_floor


@dataclass
class SweepResult:
    s_values: np.ndarray
    results: list
    meta: dict = field(default_factory=dict)

    @property
    def measures(self) -> np.ndarray:
        return np.array([r.measure for r in self.results])

    @property
    def stderrs(self) -> np.ndarray:
        return np.array([np.nan if r.stderr is None else r.stderr for r in self.results])

    @property
    def noise_floors(self) -> np.ndarray:
        return np.array([np.nan if r.noise_floor is None else r.noise_floor for r in self.results])


def _window_mask(times: np.ndarray, window) -> np.ndarray:
    lo, hi = window
    if not hi > lo:
        raise ConfigError(f"window must satisfy t_min < t_max, got {window}")
    span = max(abs(lo), abs(hi), 1.0) * 1e-9
    mask = (times >= lo - span) & (times <= hi + span)
    if mask.sum() < 2:
        raise ConfigError(f"window {window} holds fewer than two grid points")
    return mask


def nm_of_series(alpha) -> float:
    """``2 * sum(max(diff, 0))`` of a sampled series, no window handling."""
    a = np.asarray(alpha, dtype=float)
    out = 2.0 * np.sum(np.maximum(np.diff(a, axis=-1), 0.0), axis=-1)
    return float(out) if out.ndim == 0 else out


def nm_measure(trace, window=DEFAULT_WINDOW) -> NMResult:
    """Measure on the grid points of ``trace`` inside ``window``.

    ``trace`` is an :class:`AlphaTrace` or a ``(times, alpha)`` pair. The
    grid must cover the window.
    """
    if isinstance(trace, AlphaTrace):
        times, alpha = trace.times, trace.alpha
    else:
        times, alpha = (np.asarray(x, dtype=float) for x in trace)
    lo, hi = window
    if times[0] > lo + 1e-9 * max(1.0, abs(lo)) or times[-1] < hi - 1e-9 * max(1.0, abs(hi)):
        raise ConfigError(f"time grid [{times[0]}, {times[-1]}] does not cover window {window}")
    mask = _window_mask(times, window)
    t, a = times[mask], alpha[mask]
    inc = np.diff(a)
    segments = []
    start = None
    for k, d in enumerate(inc):
        if d > 0 and start is None:
            start = k
        if d <= 0 and start is not None:
            segments.append((float(t[start]), float(t[k]), float(a[k] - a[start])))
            start = None
    if start is not None:
        segments.append((float(t[start]), float(t[-1]), float(a[-1] - a[start])))
    total = 2.0 * float(np.sum(np.maximum(inc, 0.0)))
    return NMResult(total, segments, (float(lo), float(hi)))


def nm_from_stack(times, samples: np.ndarray, window=DEFAULT_WINDOW, noise_rng=None) -> NMResult:
    """Measure of the mean of per-realization traces ``samples`` (shape ``(R, T)``).

    The standard error is a leave-one-out jackknife over realizations. The
    noise floor is the mean measure of Gaussian noise with the sample
    covariance of the ensemble mean (the realization residuals combined
    with random normal weights), so it keeps the time correlation of the
    Monte Carlo error.
    """
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    r = samples.shape[0]
    mean = samples.mean(axis=0)
    res = nm_measure((times, mean), window)
    if r < 2:
        return res
    mask = _window_mask(times, window)
    inside = samples[:, mask]
    total = inside.sum(axis=0)
    loo = (total[None, :] - inside) / (r - 1)
    jk = nm_of_series(loo)
    res.stderr = float(math.sqrt((r - 1) / r * np.sum((jk - jk.mean()) ** 2)))
    if noise_rng is not None:
        resid = inside - inside.mean(axis=0)
        weights = noise_rng.standard_normal((NOISE_DRAWS, r)) / math.sqrt(r * (r - 1))
        noise = weights @ resid
        res.noise_floor = float(np.mean(nm_of_series(noise)))
    return res


def nm_sweep(
    s_values,
    N: int,
    omega: float = 0.0,
    R: int = 100,
    master_seed: int = 0,
    window=DEFAULT_WINDOW,
    dt: float = 0.01,
    workers: int | None = None,
) -> SweepResult:
    """Measure versus ``s``; sweep point ``i`` uses streams from ``i * 2**32``.

    For ``omega > 0`` the measure is taken on the depolarizing part of the
    averaged channel.
    """
    s_values = np.asarray(s_values, dtype=float)
    if s_values.size == 0:
        raise ConfigError("s_values must be non-empty")
    if int(R) != R or R < 1:
        raise ConfigError("R must be a positive integer")
    workers = default_workers() if workers is None else int(workers)
    times = np.arange(0.0, window[1] + 0.5 * dt, dt)
    results = []
    for i, s in enumerate(s_values):
        params = ModelParams(N, float(s), omega)
        offset = i * STREAM_STRIDE
        stack = realization_traces(params, times, master_seed, range(offset, offset + int(R)), workers)
        results.append(nm_from_stack(times, depolarizing_samples(stack), window, noise_generator(master_seed, i)))
    meta = {"N": int(N), "omega": float(omega), "realizations": int(R), "seed": int(master_seed), "dt": dt}
    return SweepResult(s_values, results, meta)


def depolarizing_samples(stack: np.ndarray) -> np.ndarray:
    """Per-realization alpha from a ``(R, L, T)`` stack (z alone, or mean of x and y)."""
    return stack[:, 0] if stack.shape[1] == 1 else 0.5 * (stack[:, 0] + stack[:, 1])


def noise_generator(master_seed: int, index: int) -> np.random.Generator:
    return RngStream(master_seed, NOISE_STREAM_BASE + index).generator()


def detect_transition(s_values, measures, eps: float = 0.01):
    """Smallest ``s`` beyond which the measure stays below ``eps``.

    Linear interpolation between the last sample at or above ``eps`` and
    the first one below it. Returns None when the last sample is not below
    ``eps``.
    """
    s = np.asarray(s_values, dtype=float)
    m = np.asarray(measures, dtype=float)
    if s.size == 0 or s.shape != m.shape:
        raise ConfigError("s_values and measures must be non-empty and equally long")
    if np.any(np.diff(s) <= 0):
        raise ConfigError("s_values must be strictly ascending")
    above = np.nonzero(~(m < eps))[0]
    if above.size == 0:
        return float(s[0])
    k = int(above[-1])
    if k == s.size - 1:
        return None
    s0, s1, m0, m1 = s[k], s[k + 1], m[k], m[k + 1]
    return float(s0 + (eps - m0) * (s1 - s0) / (m1 - m0))
