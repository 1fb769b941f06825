"""Perturbative theory for alpha(t).

Strong coupling: ``alpha ~ alpha0 - s^2 alpha2`` where ``alpha2`` is a
double time integral of fifteen partition components, each a product of
one-point form factors ``b1`` weighted by exact Haar-moment coefficients.
All ``b1`` arguments are integer combinations of ``(t, t', t'')``, which the
component tables below store as coefficient triples.

Weak coupling: closed forms in the Heisenberg time of the environment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import erf

from .dynamics import AlphaTrace, ModelParams, echo_eigenphase_cutoff, sample_environment
from .ensembles import RngStream
from .errors import ConfigError, QuadratureError
from .haar_moments import ctm_vectors
from .spectral_oracles import alpha0_exact, alpha0_largeN, bessel_b1

__all__ = [
    "Kernel",
    "SEMICIRCLE",
    "GAUSSIAN",
    "QuadratureSpec",
    "F1_TABLE",
    "F2_TABLE",
    "aux_F",
    "aux_G",
    "aux_H",
    "f_components",
    "shape_integrals",
    "alpha2",
    "alpha2_largeN",
    "alpha2_gpue_closed",
    "alpha_lr_strong",
    "ensemble_cutoff",
    "composite_alpha",
    "g_of_t",
    "p_lr",
    "p_elr",
    "alpha_weak",
    "lambda_from_s",
]


def _gaussian_b1(t):
    return np.exp(-0.5 * np.square(t))


@dataclass(frozen=True)
class Kernel:
    """One-point form factor of the coupling spectrum, ``b1(0) = 1``."""

    name: str
    b1: Callable = field(compare=False)


SEMICIRCLE = Kernel("semicircle", bessel_b1)
GAUSSIAN = Kernel("gaussian", _gaussian_b1)


def _kernel(kernel) -> Kernel:
    if isinstance(kernel, Kernel):
        return kernel
    for k in (SEMICIRCLE, GAUSSIAN):
        if kernel == k.name:
            return k
    raise ConfigError(f"unknown kernel {kernel!r}")


@dataclass(frozen=True)
class QuadratureSpec:
    h: float = 0.01
    rule: str = "simpson"
    tol: float = 1e-6
    min_intervals: int = 200
    max_refinements: int = 3

    def __post_init__(self):
        if not self.h > 0:
            raise ConfigError("quadrature step must be positive")
        if self.rule not in ("simpson", "trapezoid"):
            raise ConfigError(f"unknown quadrature rule {self.rule!r}")
        if not self.tol > 0:
            raise ConfigError("quadrature tolerance must be positive")


FINITE_N_QUAD = QuadratureSpec(tol=1e-4)

# Component tables: (class, args) with class 0 = constant 2N, 1 = F, 2 = G,
# 3 = H and each argument a coefficient triple on (t, t', t'').
F1_TABLE = (
    (0, ()),
    (1, ((0, 0, 1),)),
    (1, ((0, 1, -1),)),
    (1, ((1, -1, 0),)),
    (1, ((1, 0, 0),)),
    (1, ((0, 1, 0),)),
    (1, ((1, -1, 1),)),
    (1, ((1, 0, -1),)),
    (2, ((0, 1, 0), (0, -1, 1), (0, 0, 1))),
    (2, ((1, -1, 1), (-1, 1, 0), (0, 0, 1))),
    (2, ((1, 0, -1), (-1, 1, 0), (0, -1, 1))),
    (2, ((1, 0, 0), (-1, 0, 1), (0, 0, 1))),
    (2, ((1, 0, 0), (-1, 1, -1), (0, -1, 1))),
    (2, ((1, 0, 0), (-1, 1, 0), (0, 1, 0))),
    (3, ((1, 0, 0), (0, 1, 0), (0, 0, 1))),
)
F2_TABLE = (
    (0, ()),
    (1, ((0, 0, 1),)),
    (1, ((0, 1, 0),)),
    (1, ((1, -1, 0),)),
    (1, ((-1, 0, 1),)),
    (1, ((0, -1, 1),)),
    (1, ((-1, 1, 1),)),
    (1, ((1, 0, 0),)),
    (2, ((0, 0, 1), (0, 1, -1), (0, 1, 0))),
    (2, ((0, 0, 1), (1, -1, -1), (-1, 1, 0))),
    (2, ((1, 0, 0), (-1, 1, 0), (0, 1, 0))),
    (2, ((0, 0, 1), (1, 0, -1), (1, 0, 0))),
    (2, ((-1, 1, 1), (1, 0, -1), (0, 1, 0))),
    (2, ((0, -1, 1), (1, 0, -1), (-1, 1, 0))),
    (3, ((0, 0, 1), (1, 0, 0), (0, 1, 0))),
)
# large-N integrand: first term minus second term
_LARGE_N_PLUS = ((1, 0, 0), (-1, 1, -1), (0, -1, 1))
_LARGE_N_MINUS = ((0, 0, 1), (1, 0, -1), (-1, 1, 0), (0, 1, 0))


def _falling(n: int, k: int) -> float:
    """``n (n-1) ... (n-k+1)``: the factorial ratio ``n!/(n-k)!``."""
    out = 1.0
    for i in range(k):
        out *= n - i
    return out


def _class_multiplicity(N: int, cls: int) -> float:
    # constant, F, G, H carry 2N, (2N)_2, (2N)_3, (2N)_4
    return 2.0 * N if cls == 0 else _falling(2 * N, cls + 1)


def _check_N(N):
    if int(N) != N or N < 2:
        raise ConfigError(f"N must be an integer >= 2, got {N!r}")
    return int(N)


def aux_F(x, N: int, kernel=SEMICIRCLE):
    N = _check_N(N)
    return _falling(2 * N, 2) * np.square(_kernel(kernel).b1(x))


def aux_G(x, y, z, N: int, kernel=SEMICIRCLE):
    N = _check_N(N)
    b1 = _kernel(kernel).b1
    return _falling(2 * N, 3) * b1(x) * b1(y) * b1(z)


def aux_H(x, y, z, N: int, kernel=SEMICIRCLE):
    N = _check_N(N)
    b1 = _kernel(kernel).b1
    return _falling(2 * N, 4) * b1(x) * b1(np.subtract(y, x)) * b1(np.subtract(z, y)) * b1(z)


def _combo(coef, t, tp, tpp):
    a, b, c = coef
    return a * t + b * tp + c * tpp


def f_components(t, tp, tpp, N: int, kernel=SEMICIRCLE, which: int = 1) -> np.ndarray:
    """The fifteen averaged components ``<F_J>`` at ``(t, t', t'')``.

    Requires ``0 <= t'' <= t' <= t``; ``which`` selects the first or the
    second table.
    """
    N = _check_N(N)
    if not 0 <= tpp <= tp <= t:
        raise ConfigError(f"need 0 <= t'' <= t' <= t, got {(t, tp, tpp)}")
    table = {1: F1_TABLE, 2: F2_TABLE}.get(which)
    if table is None:
        raise ConfigError("which must be 1 or 2")
    out = np.empty(15)
    for j, (cls, args) in enumerate(table):
        vals = [_combo(c, t, tp, tpp) for c in args]
        if cls == 0:
            out[j] = 2.0 * N
        elif cls == 1:
            out[j] = aux_F(vals[0], N, kernel)
        elif cls == 2:
            out[j] = aux_G(*vals, N, kernel)
        else:
            out[j] = aux_H(*vals, N, kernel)
    return out


# ---- triangular-lattice quadrature -------------------------------------


def _line_weights(i: int, rule: str) -> np.ndarray:
    """Unit-step weights for integrating over ``i`` intervals (``i+1`` points)."""
    w = np.zeros(i + 1)
    if i == 0:
        return w
    if rule == "trapezoid" or i == 1:
        w[:] = 1.0
        w[0] = w[-1] = 0.5
        return w
    if i % 2 == 0:
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w[0] = w[-1] = 1.0
        return w / 3.0
    # odd: Simpson on the first i-3 intervals, 3/8 rule on the last three
    if i > 3:
        w[: i - 2] = _line_weights(i - 3, rule)
    w[i - 3 :] += np.array([3.0, 9.0, 9.0, 3.0]) / 8.0
    return w


@lru_cache(maxsize=8)
def _lattice(m: int, rule: str):
    """Lattice points ``(i, k)``, ``0 <= k <= i <= m``, and unit-step weights."""
    outer = _line_weights(m, rule)
    ii, kk, ww = [], [], []
    for i in range(1, m + 1):
        inner = _line_weights(i, rule)
        ii.append(np.full(i + 1, i))
        kk.append(np.arange(i + 1))
        ww.append(outer[i] * inner)
    return np.concatenate(ii), np.concatenate(kk), np.concatenate(ww)


def _intervals(t: float, quad: QuadratureSpec) -> int:
    m = max(quad.min_intervals, math.ceil(t / quad.h - 1e-9))
    return 4 * math.ceil(m / 4)


def _shape_values(table, m: int, b1tab: np.ndarray, ii, kk) -> list:
    """Unnormalized b1 products of every table entry on the lattice."""

    def look(coef):
        a, b, c = coef
        return b1tab[np.abs(a * m + b * ii + c * kk)]

    out = []
    for cls, args in table:
        if cls == 0:
            out.append(None)
        elif cls == 1:
            out.append(np.square(look(args[0])))
        elif cls == 2:
            out.append(look(args[0]) * look(args[1]) * look(args[2]))
        else:
            x, y, z = args
            diff_yx = tuple(p - q for p, q in zip(y, x))
            diff_zy = tuple(p - q for p, q in zip(z, y))
            out.append(look(x) * look(diff_yx) * look(diff_zy) * look(z))
    return out


def _integrate(values, ww, area_unit) -> np.ndarray:
    res = np.empty(len(values))
    for j, v in enumerate(values):
        res[j] = area_unit * (ww.sum() if v is None else np.dot(ww, v))
    return res


def _shape_pair(t: float, m: int, kernel: Kernel, rule: str, tables):
    """Shape integrals on steps ``h = t/m`` and ``2h``."""
    h = t / m
    b1tab = np.asarray(kernel.b1(h * np.arange(2 * m + 1)), dtype=float)
    fine = _lattice(m, rule)
    coarse = _lattice(m // 2, rule)
    results = []
    for mm, (ii, kk, ww), step, tab in ((m, fine, h, b1tab), (m // 2, coarse, 2 * h, b1tab[::2])):
        row = []
        for table in tables:
            row.append(_integrate(_shape_values(table, mm, tab, ii, kk), ww, step * step))
        results.append(row)
    return results


def shape_integrals(t: float, kernel=SEMICIRCLE, quad: QuadratureSpec = FINITE_N_QUAD, m: int | None = None):
    """N-independent integrals of the table entries over the triangle.

    Returns ``(fine, coarse)``; each is a pair of 15-vectors (first and
    second table) with the class prefactors left out.
    """
    kernel = _kernel(kernel)
    if t < 0:
        raise ConfigError("t must be non-negative")
    m = _intervals(t, quad) if m is None else m
    fine, coarse = _shape_pair(float(t), m, kernel, quad.rule, (F1_TABLE, F2_TABLE))
    return fine, coarse


def _combine(shapes, N: int) -> float:
    c1, c2 = (np.array(v.to_floats()) for v in ctm_vectors(N))
    mult = np.array([_class_multiplicity(N, cls) for cls, _ in F1_TABLE])
    s1, s2 = shapes
    return float(np.dot(c1 * mult, s1) - np.dot(c2 * mult, s2)) / N


def _richardson(fine: float, coarse: float, rule: str) -> float:
    order = 4 if rule == "simpson" else 2
    return abs(fine - coarse) / (2**order - 1)


def alpha2(t: float, N: int, kernel=SEMICIRCLE, quad: QuadratureSpec = FINITE_N_QUAD) -> float:
    """Second-order coefficient of the strong-coupling expansion at finite ``N``.

    ``alpha2 = (1/N) Re int_0^t dt' int_0^t' dt'' sum_J (c1_J F1_J - c2_J F2_J)``
    with exact rational coefficients from :func:`ctm_vectors`.
    """
    N = _check_N(N)
    kernel = _kernel(kernel)
    if t < 0:
        raise ConfigError("t must be non-negative")
    if t == 0:
        return 0.0
    return _alpha2_cached(float(t), N, kernel, quad)


@lru_cache(maxsize=8192)
def _alpha2_cached(t: float, N: int, kernel: Kernel, quad: QuadratureSpec) -> float:
    m = _intervals(t, quad)
    for _ in range(quad.max_refinements + 1):
        fine, coarse = shape_integrals(t, kernel, quad, m)
        qf, qc = _combine(fine, N), _combine(coarse, N)
        est = _richardson(qf, qc, quad.rule)
        if est <= quad.tol:
            return qf
        m *= 2
    raise QuadratureError(f"alpha2({t}, {N}) error estimate {est:.3g} above {quad.tol:g}", est)


def _large_n_pair(t: float, m: int, kernel: Kernel, rule: str):
    h = t / m
    b1tab = np.asarray(kernel.b1(h * np.arange(2 * m + 1)), dtype=float)
    out = []
    for mm, step, tab in ((m, h, b1tab), (m // 2, 2 * h, b1tab[::2])):
        ii, kk, ww = _lattice(mm, rule)

        def look(coef):
            a, b, c = coef
            return tab[np.abs(a * mm + b * ii + c * kk)]

        plus = look(_LARGE_N_PLUS[0]) * look(_LARGE_N_PLUS[1]) * look(_LARGE_N_PLUS[2])
        minus = np.prod([look(c) for c in _LARGE_N_MINUS], axis=0)
        out.append(2.0 * step * step * float(np.dot(ww, plus - minus)))
    return out


def alpha2_largeN(t: float, kernel=SEMICIRCLE, quad: QuadratureSpec = QuadratureSpec()) -> float:
    """Leading large-N term of ``alpha2``.

    ``2 int_0^t dt' int_0^t' dt'' [b1(t) b1(t'-t-t'') b1(t''-t')
    - b1(t'') b1(t-t'') b1(t'-t) b1(t')]``.
    """
    kernel = _kernel(kernel)
    if t < 0:
        raise ConfigError("t must be non-negative")
    if t == 0:
        return 0.0
    m = _intervals(t, quad)
    for _ in range(quad.max_refinements + 1):
        qf, qc = _large_n_pair(float(t), m, kernel, quad.rule)
        est = _richardson(qf, qc, quad.rule)
        if est <= quad.tol:
            return qf
        m *= 2
    raise QuadratureError(f"alpha2_largeN({t}) error estimate {est:.3g} above {quad.tol:g}", est)


def alpha2_gpue_closed(t):
    """Closed form of the large-N ``alpha2`` for Gaussian eigenvalues."""
    t = np.asarray(t, dtype=float)
    e = erf(t / 2.0)
    out = math.sqrt(math.pi) * t * np.exp(-0.75 * t * t) * e - math.pi * np.exp(-0.5 * t * t) * e * e
    return float(out) if out.ndim == 0 else out


def alpha_lr_strong(t, s: float, N: int | None, kernel=SEMICIRCLE):
    """``alpha0(t) - s^2 alpha2(t)``; ``N=None`` selects the large-N forms.

    ``t`` may be a scalar or an array.
    """
    if s < 0:
        raise ConfigError("s must be non-negative")
    tt = np.atleast_1d(np.asarray(t, dtype=float))
    if N is None:
        a0 = alpha0_largeN(tt)
        a2 = np.array([alpha2_largeN(x, kernel) for x in tt]) if s else 0.0
    else:
        a0 = alpha0_exact(tt, int(N))
        a2 = np.array([alpha2(x, N, kernel) for x in tt]) if s else 0.0
    out = a0 - s * s * a2
    return float(out[0]) if np.ndim(t) == 0 else out


def ensemble_cutoff(N: int, s: float, time_grid, master_seed: int, count: int = 16) -> float:
    """Median echo cutoff over ``count`` realizations; no crossing counts as infinity."""
    if count < 1:
        raise ConfigError("count must be positive")
    cuts = []
    for k in range(count):
        h_e, v = sample_environment(N, RngStream(master_seed, k))
        c = echo_eigenphase_cutoff(h_e, v, s, time_grid)
        cuts.append(math.inf if c is None else c)
    return float(np.median(cuts))


def composite_alpha(times, s: float, N: int, t_cut: float | None = None, master_seed: int = 0, cut_count: int = 16) -> AlphaTrace:
    """Linear response up to the echo cutoff, anchored exponential after it.

    The tail ``A exp(-gamma t)`` takes ``gamma`` from a least-squares line
    through ``log alpha_LR`` on ``[0.8 t_cut, t_cut]`` and ``A`` from
    continuity at ``t_cut``. If ``alpha_LR`` is not positive on that window,
    or the fitted slope is not a decay, the LR curve is continued and the
    trace is flagged in ``meta['tail']``.
    """
    if not s > 0:
        raise ConfigError("composite_alpha needs s > 0")
    N = _check_N(N)
    t = np.asarray(times, dtype=float)
    if t_cut is None:
        t_cut = ensemble_cutoff(N, s, t, master_seed, cut_count)
    lr = alpha_lr_strong(t, s, N)
    meta = {"params": ModelParams(N, s).as_dict(), "t_cut": t_cut, "cut_count": cut_count, "seed": master_seed}
    if not math.isfinite(t_cut) or t_cut >= t[-1]:
        meta["tail"] = "none"
        return AlphaTrace(t, lr, None, meta)
    window = (t >= 0.8 * t_cut) & (t <= t_cut)
    a_cut = float(alpha_lr_strong(t_cut, s, N))
    if window.sum() < 2 or np.any(lr[window] <= 0) or a_cut <= 0:
        meta["tail"] = "fallback: alpha_LR not positive on fit window"
        return AlphaTrace(t, lr, None, meta)
    slope, _ = np.polyfit(t[window], np.log(lr[window]), 1)
    if slope >= 0:
        meta["tail"] = "fallback: fitted slope is not a decay"
        return AlphaTrace(t, lr, None, meta)
    gamma = -slope
    out = lr.copy()
    after = t > t_cut
    out[after] = a_cut * np.exp(-gamma * (t[after] - t_cut))
    meta.update(tail="exponential", gamma=float(gamma), amplitude=float(a_cut * math.exp(gamma * t_cut)))
    return AlphaTrace(t, out, None, meta)


# ---- weak coupling -----------------------------------------------------


def _check_tau(tau_H):
    if not tau_H > 0:
        raise ConfigError("tau_H must be positive")


def g_of_t(t, tau_H: float):
    """``2t max(t, tau_H) + (2/(3 tau_H)) min(t, tau_H)^3`` for finite ``tau_H > 0``."""
    _check_tau(tau_H)
    t = np.asarray(t, dtype=float)
    if math.isinf(tau_H):
        raise ConfigError("g diverges for infinite tau_H; use the golden-rule rate instead")
    out = 2.0 * t * np.maximum(t, tau_H) + (2.0 / (3.0 * tau_H)) * np.minimum(t, tau_H) ** 3
    return float(out) if out.ndim == 0 else out


def p_lr(t, lam: float, tau_H: float):
    """Linear-response purity ``1 - lam^2 g(t)``."""
    return 1.0 - lam * lam * g_of_t(t, tau_H)


def p_elr(t, lam: float, tau_H: float):
    """Exponentiated purity ``1/2 + 1/2 exp((P_LR - 1)/2)``."""
    return 0.5 + 0.5 * np.exp(0.5 * (p_lr(t, lam, tau_H) - 1.0))


def alpha_weak(t, lam: float, tau_H: float):
    """``exp(-lam^2 g(t) / 2)``."""
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    return np.exp(-0.5 * lam * lam * g_of_t(t, tau_H))


def lambda_from_s(s: float, N: int) -> float:
    if not s > 0:
        raise ConfigError("s must be positive")
    return 1.0 / (s * N)
