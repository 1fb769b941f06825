"""Analytic reference curves for the unperturbed (s = 0) decay.

For a GUE matrix of dimension ``n`` at element variance ``1/n`` the
averaged Bloch contraction depends on the spectrum only, through the
one-point form factor ``b1`` (Fourier transform of the level density) and
the two-point form factor ``b2`` (Fourier transform of the cluster
function). Both are computed by quadrature over the oscillator basis:
Gauss-Hermite nodes by default, an equispaced trapezoid grid once the
oscillation would demand too many Gauss nodes.

Scaling: with ``x = E*sqrt(n/2)`` the finite-n density is
``sum_{j<n} psi_j(x)**2`` where ``psi_j`` are the orthonormal Hermite
functions, and ``e^{-iEt}`` becomes ``e^{-i kappa x}`` with
``kappa = t*sqrt(2/n)``.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import j1, roots_hermite

from .errors import ConfigError, NumericalError

__all__ = [
    "hermite_node_basis",
    "uniform_node_basis",
    "quadrature_order",
    "b1_gue",
    "b2_gue",
    "alpha0_exact",
    "alpha0_from_spectrum",
    "alpha0_largeN",
    "bessel_b1",
]

_RESCALE = 1e150
# nodes beyond this count make the m x m kernel matrix too large
_DENSE_KERNEL_LIMIT = 4096


def _check_n(n):
    if int(n) != n or n < 1:
        raise ConfigError(f"matrix dimension must be a positive integer, got {n!r}")
    return int(n)


def quadrature_order(n: int, t_max: float) -> int:
    """Number of Gauss-Hermite nodes for dimension ``n`` up to time ``t_max``.

    ``4n`` nodes resolve the density; resolving the oscillation
    ``e^{i kappa x}`` additionally needs node spacing below ``pi/kappa``,
    i.e. roughly ``kappa**2`` extra nodes.
    """
    kappa2 = 2.0 * float(t_max) ** 2 / n
    return int(max(4 * n, n + 40 + math.ceil(1.5 * kappa2)))


def hermite_node_basis(n: int, m: int):
    """Gauss-Hermite nodes ``x`` and the ``n x m`` matrix ``u``.

    ``u[j, k] = psi_j(x_k) / sqrt(sum_{l<m} psi_l(x_k)**2)``; with these
    entries ``sum_k u[j,k] u[l,k] f(x_k)`` is the Gauss rule for
    ``int psi_j psi_l f dx``. The per-node normalization absorbs the
    Christoffel weights, so the huge dynamic range of ``psi_j`` at large
    ``|x|`` only enters through ratios. The recurrence runs with a
    per-node log scale and rescales whenever values pass 1e150.
    """
    n = _check_n(n)
    if m < n:
        raise ConfigError(f"need at least n={n} nodes, got {m}")
    x, _ = roots_hermite(m)
    cur = np.ones(m)
    prev = np.zeros(m)
    log_scale = np.zeros(m)
    rows = np.empty((n, m))
    row_logs = np.empty((n, m))
    norm2 = np.zeros(m)
    for j in range(m):
        if j < n:
            rows[j] = cur
            row_logs[j] = log_scale
        norm2 += cur * cur
        nxt = math.sqrt(2.0 / (j + 1)) * x * cur - math.sqrt(j / (j + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if big.any():
            f = np.where(big, np.abs(cur), 1.0)
            cur = cur / f
            prev = prev / f
            norm2 = norm2 / (f * f)
            log_scale = log_scale + np.log(f)
    # bring every stored row to the final scale of its node
    u = rows * np.exp(row_logs - log_scale) / np.sqrt(norm2)
    return x, u


def uniform_node_basis(n: int, t_max: float):
    """Uniform-grid alternative to :func:`hermite_node_basis` for long times.

    ``psi_j * sqrt(h)`` on an equispaced grid covering the classically
    allowed region plus a margin. The trapezoid rule is spectrally accurate
    for these band-limited, rapidly decaying integrands once ``h`` resolves
    the combined bandwidth ``2 X + kappa``; the point count grows only
    linearly in ``kappa``.
    """
    n = _check_n(n)
    half = math.sqrt(2.0 * n + 1.0) + 12.0
    kappa = float(t_max) * math.sqrt(2.0 / n)
    h = 2.0 * math.pi / (2.0 * half + kappa) / 1.5
    p = 2 * int(math.ceil(half / h)) + 1
    x = np.linspace(-half, half, p)
    h = x[1] - x[0]
    cur = np.ones(p)
    prev = np.zeros(p)
    log_scale = -0.5 * x * x - 0.25 * math.log(math.pi)
    u = np.empty((n, p))
    for j in range(n):
        with np.errstate(under="ignore"):
            u[j] = cur * np.exp(log_scale) * math.sqrt(h)
        nxt = math.sqrt(2.0 / (j + 1)) * x * cur - math.sqrt(j / (j + 1)) * prev
        prev, cur = cur, nxt
        big = np.abs(cur) > _RESCALE
        if big.any():
            f = np.where(big, np.abs(cur), 1.0)
            cur = cur / f
            prev = prev / f
            log_scale = log_scale + np.log(f)
    return x, u


def _basis(n: int, t_max: float):
    m = quadrature_order(n, t_max)
    if m <= 8 * n + 64:
        return hermite_node_basis(n, m)
    return uniform_node_basis(n, t_max)


def _times(t):
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise ConfigError("times must be finite")
    return t


def b1_gue(t, n: int):
    """One-point form factor of the GUE at element variance ``1/n``.

    ``b1(t) = (1/n) int dE R1(E) e^{-iEt}``; real and even, ``b1(0) = 1``.
    Accepts a scalar or an array of times.
    """
    n = _check_n(n)
    tt = _times(t)
    x, u = _basis(n, np.max(np.abs(tt)) if tt.size else 0.0)
    density = np.sum(u * u, axis=0)
    kappa = np.abs(tt.ravel()) * math.sqrt(2.0 / n)
    out = np.cos(np.outer(kappa, x)) @ density / n
    if not np.all(np.isfinite(out)):
        raise NumericalError("b1 quadrature produced non-finite values")
    out = out.reshape(tt.shape)
    return float(out) if out.ndim == 0 else out


def b2_gue(t, n: int):
    """Two-point form factor of the GUE, normalized so ``b2(0) = 1``.

    Double Gauss-Hermite quadrature of ``K(x,y)**2 e^{-i kappa (x-y)}``,
    ``K`` being the finite-n kernel, divided by its value at ``t = 0``
    (which equals ``n`` up to rounding).
    """
    n = _check_n(n)
    tt = _times(t)
    flat = np.abs(tt.ravel())
    x, u = _basis(n, flat.max() if flat.size else 0.0)
    kappa = flat * math.sqrt(2.0 / n)
    if x.size <= _DENSE_KERNEL_LIMIT:
        gram = u.T @ u
        a = gram * gram
        c = np.cos(np.outer(x, kappa))
        s = np.sin(np.outer(x, kappa))
        raw = np.sum(c * (a @ c), axis=0) + np.sum(s * (a @ s), axis=0)
        norm = a.sum()
    else:
        # many nodes, small n: work with the n x n matrix of e^{i kappa x}
        raw = np.empty(kappa.size)
        for i, k in enumerate(kappa):
            d = (u * np.exp(1j * k * x)) @ u.T
            raw[i] = np.sum(np.abs(d) ** 2)
        norm = np.sum((u @ u.T) ** 2)
    out = raw / norm
    if not np.all(np.isfinite(out)):
        raise NumericalError("b2 quadrature produced non-finite values")
    out = out.reshape(tt.shape)
    return float(out) if out.ndim == 0 else out


def alpha0_exact(t, N: int):
    """Exact ensemble-averaged contraction at ``s = 0``.

    ``(4N^2 b1^2 + 2N (1 - b2) - 1) / (4N^2 - 1)`` with ``b1``, ``b2`` of
    the ``2N``-dimensional coupling matrix. Tends to ``1/(2N+1)`` at long
    times.
    """
    N = _check_n(N)
    n = 2 * N
    b1 = b1_gue(t, n)
    b2 = b2_gue(t, n)
    return (n * n * np.square(b1) + n * (1.0 - b2) - 1.0) / (n * n - 1.0)


def alpha0_from_spectrum(eigenvalues, t):
    """Contraction for one realization at ``s = 0`` from its spectrum alone.

    The eigenvector average is done analytically:
    ``(n^2 |f|^2 - 1)/(n^2 - 1)`` with ``f = mean(exp(-i v t))``.
    """
    v = np.asarray(eigenvalues, dtype=float).ravel()
    n = v.size
    if n < 2:
        raise ConfigError("need at least two eigenvalues")
    tt = _times(t)
    f = np.exp(-1j * np.outer(tt.ravel(), v)).mean(axis=1)
    out = ((n * n * np.abs(f) ** 2 - 1.0) / (n * n - 1.0)).reshape(tt.shape)
    return float(out) if out.ndim == 0 else out


def bessel_b1(t):
    """Semicircle form factor ``J1(2t)/t`` with the ``t -> 0`` limit 1."""
    tt = np.asarray(t, dtype=float)
    small = np.abs(tt) < 1e-8
    safe = np.where(small, 1.0, tt)
    out = np.where(small, 1.0 - 0.5 * tt * tt, j1(2.0 * safe) / safe)
    return float(out) if out.ndim == 0 else out


def alpha0_largeN(t):
    """Large-N limit of :func:`alpha0_exact`: ``(J1(2t)/t)**2``."""
    return np.square(bessel_b1(t))
