"""Exact propagation of the qubit + environment model and channel extraction.

The total Hamiltonian acts on C^2 (x) C^N with the qubit as the outer
factor::

    H = omega sz (x) 1_N + s 1_2 (x) H_e + V

Everything downstream works in the eigenbasis of ``H``: for a Pauli
operator ``P (x) 1`` with eigenbasis image ``P' = Q^dagger (P (x) 1) Q``, the
diagonal channel element is

    Lambda_PP(t) = (1/2N) sum_jk |P'_jk|^2 cos((E_j - E_k) t),

which costs O((2N)^2) per time once ``H`` is diagonalized.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from .ensembles import EnsembleSpec, RngStream, sample_gue
from .errors import ConfigError, NumericalError

__all__ = [
    "ModelParams",
    "SpectralDecomposition",
    "PauliTransferMatrix",
    "AlphaTrace",
    "PAULI",
    "assemble_hamiltonian",
    "decompose",
    "channel_matrix",
    "alpha_single",
    "pauli_diagonal",
    "sample_environment",
    "realization_traces",
    "reduce_traces",
    "ensemble_alpha",
    "ensemble_channel",
    "purity_of_alpha",
    "echo_eigenphase_cutoff",
    "weak_coupling_hamiltonian",
    "weak_realization_traces",
    "ensemble_alpha_weak",
]

PAULI = {
    "i": np.eye(2, dtype=complex),
    "x": np.array([[0, 1], [1, 0]], dtype=complex),
    "y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "z": np.array([[1, 0], [0, -1]], dtype=complex),
}
_BASIS = ("i", "x", "y", "z")

# stream indices of different sweep points are separated by this stride
STREAM_STRIDE = 1 << 32
# bound on the (times x dim) phase blocks held in memory at once
_BLOCK_ELEMENTS = 1 << 22


@dataclass(frozen=True)
class ModelParams:
    N: int
    s: float
    omega: float = 0.0

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise ConfigError(f"N must be a positive integer, got {self.N!r}")
        if not (math.isfinite(self.s) and self.s >= 0):
            raise ConfigError(f"s must be finite and non-negative, got {self.s!r}")
        if not (math.isfinite(self.omega) and self.omega >= 0):
            raise ConfigError(f"omega must be finite and non-negative, got {self.omega!r}")

    def as_dict(self):
        return {"N": int(self.N), "s": float(self.s), "omega": float(self.omega)}


@dataclass(frozen=True)
class SpectralDecomposition:
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def reconstruct(self) -> np.ndarray:
        q = self.eigenvectors
        return (q * self.eigenvalues) @ q.conj().T

    def propagator(self, t: float) -> np.ndarray:
        q = self.eigenvectors
        return (q * np.exp(-1j * self.eigenvalues * t)) @ q.conj().T


@dataclass(frozen=True)
class PauliTransferMatrix:
    """Real 4x4 channel matrix, rows and columns ordered (1, sx, sy, sz)."""

    m: np.ndarray

    def apply(self, bloch) -> np.ndarray:
        """Image of the Bloch vector ``bloch`` under the channel."""
        v = np.concatenate(([1.0], np.asarray(bloch, dtype=float)))
        return (self.m @ v)[1:]


@dataclass
class AlphaTrace:
    times: np.ndarray
    alpha: np.ndarray
    stderr: np.ndarray | None = None
    meta: dict = field(default_factory=dict)
    # further named series on the same grid (e.g. alpha_z for omega > 0)
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.alpha = np.asarray(self.alpha, dtype=float)
        if self.times.shape != self.alpha.shape:
            raise ConfigError("times and alpha must have equal length")
        if self.stderr is not None:
            self.stderr = np.asarray(self.stderr, dtype=float)
            if self.stderr.shape != self.alpha.shape:
                raise ConfigError("stderr must match alpha in length")


def _times(times) -> np.ndarray:
    t = np.atleast_1d(np.asarray(times, dtype=float))
    if t.ndim != 1 or t.size == 0:
        raise ConfigError("time grid must be a non-empty 1-d sequence")
    if not np.all(np.isfinite(t)):
        raise ConfigError("time grid contains non-finite values")
    return t


def _env_dim(dim: int) -> int:
    if dim % 2:
        raise ConfigError(f"total dimension must be even (qubit x environment), got {dim}")
    return dim // 2


def assemble_hamiltonian(params: ModelParams, H_e: np.ndarray, V: np.ndarray) -> np.ndarray:
    N = params.N
    if H_e.shape != (N, N):
        raise ConfigError(f"H_e must be {N}x{N}, got {H_e.shape}")
    if V.shape != (2 * N, 2 * N):
        raise ConfigError(f"V must be {2 * N}x{2 * N}, got {V.shape}")
    h = V.astype(complex, copy=True)
    if params.s:
        h[:N, :N] += params.s * H_e
        h[N:, N:] += params.s * H_e
    if params.omega:
        idx = np.arange(N)
        h[idx, idx] += params.omega
        h[idx + N, idx + N] -= params.omega
    return h


def decompose(H: np.ndarray) -> SpectralDecomposition:
    """Eigen-decomposition with ascending eigenvalues; LAPACK failures raise."""
    try:
        w, q = np.linalg.eigh(H)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigensolver did not converge: {exc}") from exc
    if not np.all(np.isfinite(w)):
        raise NumericalError("eigensolver returned non-finite eigenvalues")
    return SpectralDecomposition(w, q)


def _pauli_in_eigenbasis(decomp: SpectralDecomposition, label: str) -> np.ndarray:
    q = decomp.eigenvectors
    N = _env_dim(decomp.dim)
    if label == "i":
        return np.eye(decomp.dim, dtype=complex)
    if label == "z":
        z = np.concatenate((np.ones(N), -np.ones(N)))
        return (q.conj().T * z) @ q
    # sigma (x) 1 swaps (or phase-swaps) the two qubit blocks of rows
    top, bottom = q[:N], q[N:]
    if label == "x":
        swapped = np.vstack((bottom, top))
    else:
        swapped = np.vstack((-1j * bottom, 1j * top))
    return q.conj().T @ swapped


def pauli_diagonal(decomp: SpectralDecomposition, times, labels=("z",)) -> np.ndarray:
    """Diagonal channel elements ``Lambda_PP(t)`` for each label in ``labels``.

    Returns an array of shape ``(len(labels), len(times))``.
    """
    t = _times(times)
    e = decomp.eigenvalues
    n = decomp.dim
    weights = [np.abs(_pauli_in_eigenbasis(decomp, lab)) ** 2 for lab in labels]
    out = np.empty((len(labels), t.size))
    block = max(1, _BLOCK_ELEMENTS // n)
    for start in range(0, t.size, block):
        sl = slice(start, start + block)
        phase = np.outer(t[sl], e)
        c, s = np.cos(phase), np.sin(phase)
        for i, w in enumerate(weights):
            out[i, sl] = (np.sum((c @ w) * c, axis=1) + np.sum((s @ w) * s, axis=1)) / n
    return out


def alpha_single(decomp: SpectralDecomposition, times) -> AlphaTrace:
    """Contraction factor ``Lambda_zz(t)`` of one realization.

    At ``omega = 0`` this is the full isotropic ``alpha``; with an internal
    Hamiltonian it is only the z entry (see :func:`channel_matrix`).
    """
    t = _times(times)
    return AlphaTrace(t, pauli_diagonal(decomp, t, ("z",))[0])


def channel_matrix(decomp: SpectralDecomposition, t: float) -> PauliTransferMatrix:
    """Pauli transfer matrix of one realization at time ``t``.

    ``Lambda_jk = (1/2N) tr[sigma_j (x) 1  U  sigma_k (x) 1  U^dagger]``,
    i.e. the environment starts maximally mixed. Negative ``t`` runs the
    dynamics backwards.
    """
    if not math.isfinite(t):
        raise ConfigError("t must be finite")
    n = decomp.dim
    ops = [_pauli_in_eigenbasis(decomp, lab) for lab in _BASIS]
    ph = np.exp(-1j * decomp.eigenvalues * t)
    m = np.empty((4, 4), dtype=complex)
    for k, sk in enumerate(ops):
        # U sigma_k U^dagger in the eigenbasis: D sk D^dagger
        evolved = (ph[:, None] * sk) * ph.conj()[None, :]
        for j, sj in enumerate(ops):
            m[j, k] = np.sum(sj.T * evolved) / n
    if np.max(np.abs(m.imag)) > 1e-10:
        raise NumericalError(f"channel matrix has imaginary residue {np.max(np.abs(m.imag)):.3g}")
    return PauliTransferMatrix(m.real.copy())


def sample_environment(N: int, stream) -> tuple[np.ndarray, np.ndarray]:
    """``(H_e, V)`` drawn in that order from one generator."""
    rng = stream.generator() if isinstance(stream, RngStream) else stream
    h_e = sample_gue(EnsembleSpec.gue(N), rng)
    v = sample_gue(EnsembleSpec.gue(2 * N), rng)
    return h_e, v


def _labels(params: ModelParams):
    return ("x", "y", "z") if params.omega else ("z",)


def _one_realization(params: ModelParams, times: np.ndarray, master_seed: int, index: int) -> np.ndarray:
    h_e, v = sample_environment(params.N, RngStream(master_seed, index))
    decomp = decompose(assemble_hamiltonian(params, h_e, v))
    return pauli_diagonal(decomp, times, _labels(params))


def _map(fn, items, workers: int):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        # map preserves input order, so the reduction order is fixed
        return list(pool.map(fn, items, chunksize=chunk))


def default_workers() -> int:
    env = os.environ.get("RMTQUBIT_WORKERS")
    if env:
        try:
            w = int(env)
        except ValueError as exc:
            raise ConfigError(f"RMTQUBIT_WORKERS must be an integer, got {env!r}") from exc
        if w < 1:
            raise ConfigError("RMTQUBIT_WORKERS must be at least 1")
        return w
    return 1


def realization_traces(params: ModelParams, times, master_seed: int, indices, workers: int = 1) -> np.ndarray:
    """Per-realization diagonal channel elements, shape ``(R, L, T)``.

    ``L`` is 1 (z only) at ``omega = 0`` and 3 (x, y, z) otherwise.
    Realization ``k`` always uses stream ``(master_seed, k)``.
    """
    t = _times(times)
    fn = partial(_one_realization, params, t, int(master_seed))
    rows = _map(fn, [int(i) for i in indices], workers)
    return np.stack(rows) if rows else np.empty((0, len(_labels(params)), t.size))


def reduce_traces(stack: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error along axis 0; the error is NaN for one sample."""
    r = stack.shape[0]
    if r == 0:
        raise ConfigError("no realizations to reduce")
    mean = stack.mean(axis=0)
    if r == 1:
        return mean, np.full_like(mean, np.nan)
    return mean, stack.std(axis=0, ddof=1) / math.sqrt(r)


def trace_from_stack(params: ModelParams, times, stack: np.ndarray, meta: dict | None = None) -> AlphaTrace:
    """Turn per-realization data into an :class:`AlphaTrace`.

    With an internal Hamiltonian the reported ``alpha`` is the depolarizing
    part ``(Lambda_xx + Lambda_yy)/2``; ``Lambda_zz`` goes to
    ``extra['alpha_z']``.
    """
    t = _times(times)
    info = {"params": params.as_dict(), "realizations": int(stack.shape[0])}
    info.update(meta or {})
    if stack.shape[1] == 1:
        mean, err = reduce_traces(stack[:, 0])
        return AlphaTrace(t, mean, err, info)
    depol = 0.5 * (stack[:, 0] + stack[:, 1])
    mean, err = reduce_traces(depol)
    zmean, zerr = reduce_traces(stack[:, 2])
    info["alpha_reduction"] = "depolarizing mean of xx and yy entries"
    return AlphaTrace(t, mean, err, info, {"alpha_z": zmean, "alpha_z_stderr": zerr})


def ensemble_alpha(
    params: ModelParams,
    times,
    R: int,
    master_seed: int,
    workers: int | None = None,
    stream_offset: int = 0,
) -> AlphaTrace:
    """Ensemble mean and standard error of alpha over ``R`` realizations.

    Realizations use streams ``stream_offset .. stream_offset + R - 1``.
    """
    if int(R) != R or R < 1:
        raise ConfigError(f"R must be a positive integer, got {R!r}")
    workers = default_workers() if workers is None else int(workers)
    idx = range(stream_offset, stream_offset + int(R))
    stack = realization_traces(params, times, master_seed, idx, workers)
    return trace_from_stack(params, times, stack, {"seed": int(master_seed), "stream_offset": int(stream_offset)})


def ensemble_channel(params: ModelParams, t: float, R: int, master_seed: int, stream_offset: int = 0):
    """Mean and standard error of the 4x4 channel matrix at time ``t``."""
    if int(R) != R or R < 1:
        raise ConfigError(f"R must be a positive integer, got {R!r}")
    mats = []
    for k in range(stream_offset, stream_offset + int(R)):
        h_e, v = sample_environment(params.N, RngStream(master_seed, k))
        decomp = decompose(assemble_hamiltonian(params, h_e, v))
        mats.append(channel_matrix(decomp, t).m)
    mean, err = reduce_traces(np.stack(mats))
    return PauliTransferMatrix(mean), err


def purity_of_alpha(alpha):
    """Purity ``(1 + alpha^2)/2`` of an initially pure qubit state."""
    a = np.asarray(alpha, dtype=float)
    if np.any(~np.isfinite(a)) or np.any(np.abs(a) > 1 + 1e-12):
        raise ConfigError("alpha must lie in [-1, 1]")
    p = 0.5 * (1.0 + a * a)
    return float(p) if p.ndim == 0 else p


def echo_eigenphase_cutoff(H_e: np.ndarray, V: np.ndarray, s: float, time_grid) -> float | None:
    """First grid time at which an eigenphase of ``e^{iVt} e^{-iHt}`` reaches pi.

    ``H = s 1 (x) H_e + V``. The eigenphases move no faster than
    ``v = s max|eig(H_e)|``, so a grid point counts as a crossing when the
    largest phase is within ``v dt`` of pi (a phase that wraps between two
    grid points never lands on pi exactly), and stretches where no
    crossing is possible are skipped. Returns None if pi is never reached.
    """
    grid = _times(time_grid)
    if s < 0:
        raise ConfigError("s must be non-negative")
    if s == 0 or grid.size == 0:
        return None
    N = H_e.shape[0]
    ev, qv = np.linalg.eigh(V)
    decomp = decompose(assemble_hamiltonian(ModelParams(N, s), H_e, V))
    # similarity transform into V's eigenbasis leaves the spectrum unchanged
    overlap = qv.conj().T @ decomp.eigenvectors
    speed = s * np.max(np.abs(np.linalg.eigvalsh(H_e)))
    dt = np.max(np.diff(grid)) if grid.size > 1 else 0.0
    slack = speed * dt
    i = 0
    while i < grid.size:
        t = grid[i]
        echo = (np.exp(1j * ev * t)[:, None] * overlap * np.exp(-1j * decomp.eigenvalues * t)) @ overlap.conj().T
        theta = np.max(np.abs(np.angle(np.linalg.eigvals(echo))))
        if theta >= math.pi - slack:
            return float(t)
        # earliest time the largest phase could get within slack of pi
        wait = (math.pi - slack - theta) / speed if speed > 0 else math.inf
        nxt = np.searchsorted(grid, t + wait, side="left")
        i = max(i + 1, int(nxt) - 1)
    return None


def weak_coupling_hamiltonian(H_e: np.ndarray, V: np.ndarray, lam: float) -> np.ndarray:
    """``1_2 (x) H_e + lam V`` (qubit outer)."""
    N = H_e.shape[0]
    if V.shape != (2 * N, 2 * N):
        raise ConfigError(f"V must be {2 * N}x{2 * N}, got {V.shape}")
    h = lam * V.astype(complex)
    h[:N, :N] += H_e
    h[N:, N:] += H_e
    return h


def _one_weak(N: int, lam: float, times: np.ndarray, master_seed: int, index: int) -> np.ndarray:
    rng = RngStream(master_seed, index).generator()
    h_e = sample_gue(EnsembleSpec.gue(N), rng)
    # coupling with N-independent unit element variance
    v = sample_gue(EnsembleSpec.gue(2 * N, 1.0), rng)
    decomp = decompose(weak_coupling_hamiltonian(h_e, v, lam))
    return pauli_diagonal(decomp, times, ("z",))


def weak_realization_traces(N: int, lam: float, times, master_seed: int, indices, workers: int = 1) -> np.ndarray:
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    t = _times(times)
    fn = partial(_one_weak, int(N), float(lam), t, int(master_seed))
    return np.stack(_map(fn, [int(i) for i in indices], workers))


def ensemble_alpha_weak(N: int, lam: float, times, R: int, master_seed: int, workers: int | None = None) -> AlphaTrace:
    """Monte Carlo alpha for ``H = 1 (x) H_e + lam V``.

    ``H_e`` is GUE at variance ``1/N`` and ``V`` GUE at unit variance.
    """
    if int(R) != R or R < 1:
        raise ConfigError(f"R must be a positive integer, got {R!r}")
    workers = default_workers() if workers is None else int(workers)
    stack = weak_realization_traces(N, lam, times, master_seed, range(int(R)), workers)
    mean, err = reduce_traces(stack[:, 0])
    meta = {"N": int(N), "lambda": float(lam), "realizations": int(R), "seed": int(master_seed)}
    return AlphaTrace(_times(times), mean, err, meta)
