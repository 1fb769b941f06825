"""Random-matrix samplers: GUE, Gaussian PUE and Haar unitaries.

Every sampler is a pure function of its arguments and the random stream it
is handed. Streams are derived from ``(master_seed, stream_index)`` through
numpy's ``SeedSequence`` spawn keys, so realization ``k`` of an ensemble
always sees the same draws no matter how work is split across processes.

Normalization: an :class:`EnsembleSpec` carries the variance of one
off-diagonal complex element. With ``element_variance = 1/dim`` the GUE
level density tends to the semicircle on (-2, 2), ``<tr H^2> = dim`` and
``<(tr H)^2> = 1``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .errors import ConfigError

__all__ = [
    "RngStream",
    "EnsembleSpec",
    "derive_stream",
    "as_generator",
    "sample_gue",
    "sample_gpue",
    "sample_haar_unitary",
    "sample_haar_batch",
]


@dataclass(frozen=True)
class RngStream:
    """Identifies one independent random stream.

    The generator behind a stream is PCG64 seeded by
    ``SeedSequence(entropy=master_seed, spawn_key=(stream_index,))``. This
    is the documented, collision-free mapping; calling :meth:`generator`
    twice returns two generators positioned at the start of the same
    sequence.
    """

    master_seed: int
    stream_index: int

    def __post_init__(self):
        if self.stream_index < 0:
            raise ConfigError(f"stream_index must be non-negative, got {self.stream_index}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError(f"master_seed must fit in 64 unsigned bits, got {self.master_seed}")

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.master_seed, spawn_key=(self.stream_index,))
        return np.random.Generator(np.random.PCG64(seq))


StreamLike = Union[RngStream, np.random.Generator]


def derive_stream(master_seed: int, index: int) -> RngStream:
    return RngStream(int(master_seed), int(index))


def as_generator(stream: StreamLike) -> np.random.Generator:
    """Return a generator for ``stream``.

    A ``Generator`` is passed through (so consecutive samplers consume one
    sequence); an :class:`RngStream` yields a fresh generator at its start.
    """
    if isinstance(stream, np.random.Generator):
        return stream
    if isinstance(stream, RngStream):
        return stream.generator()
    raise TypeError(f"expected RngStream or numpy Generator, got {type(stream).__name__}")


@dataclass(frozen=True)
class EnsembleSpec:
    kind: str
    dim: int
    element_variance: float

    def __post_init__(self):
        if self.kind not in ("GUE", "GPUE"):
            raise ConfigError(f"unknown ensemble kind {self.kind!r}")
        _check_dim(self.dim)
        if not self.element_variance > 0:
            raise ConfigError(f"element_variance must be positive, got {self.element_variance}")

    @classmethod
    def gue(cls, dim: int, element_variance: float | None = None) -> "EnsembleSpec":
        """GUE spec; the default variance is ``1/dim``."""
        _check_dim(dim)
        return cls("GUE", dim, 1.0 / dim if element_variance is None else element_variance)


def _check_dim(dim) -> None:
    if int(dim) != dim or dim < 1:
        raise ConfigError(f"matrix dimension must be a positive integer, got {dim!r}")


def sample_gue(spec: EnsembleSpec, stream: StreamLike) -> np.ndarray:
    """Draw one GUE matrix.

    Built as ``(A + A^dagger)/2`` from a complex Ginibre ``A`` whose entries
    have ``E|A_ij|^2 = 2 * element_variance``; the diagonal is then real with
    variance ``element_variance`` and each off-diagonal entry has total
    variance ``element_variance``. The result is Hermitian exactly as stored.
    """
    if spec.kind != "GUE":
        raise ConfigError(f"sample_gue needs a GUE spec, got {spec.kind}")
    rng = as_generator(stream)
    n = spec.dim
    # each real component of A has variance element_variance
    scale = np.sqrt(spec.element_variance)
    a = scale * (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n)))
    # floating-point addition commutes, so h[j, i] == conj(h[i, j]) bit for bit
    return 0.5 * (a + a.conj().T)


def sample_haar_unitary(dim: int, stream: StreamLike) -> np.ndarray:
    """Haar-distributed unitary from the QR factorization of a Ginibre matrix.

    The phases of ``R``'s diagonal are moved into ``Q`` so that the
    triangular factor has a positive real diagonal; without that step the
    LAPACK sign convention biases the distribution.
    """
    _check_dim(dim)
    rng = as_generator(stream)
    z = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r)
    return q * (d / np.abs(d))


def sample_haar_batch(dim: int, count: int, stream: StreamLike) -> np.ndarray:
    """``count`` independent Haar unitaries stacked along axis 0."""
    _check_dim(dim)
    rng = as_generator(stream)
    z = (rng.standard_normal((count, dim, dim)) + 1j * rng.standard_normal((count, dim, dim))) / np.sqrt(2.0)
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=1, axis2=2)
    return q * (d / np.abs(d))[:, None, :]


def sample_gpue(dim: int, stream: StreamLike) -> np.ndarray:
    """Gaussian PUE: ``U D U^dagger`` with ``D`` i.i.d. standard normal and ``U`` Haar.

    The diagonal of ``D`` is drawn first, then ``U``, from the same stream.
    """
    _check_dim(dim)
    rng = as_generator(stream)
    d = rng.standard_normal(dim)
    u = sample_haar_unitary(dim, rng)
    h = (u * d) @ u.conj().T
    # symmetrize away the O(eps) anti-Hermitian residue of the product
    return 0.5 * (h + h.conj().T)
