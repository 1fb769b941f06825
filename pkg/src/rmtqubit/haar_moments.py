"""Exact monomial integrals over U(n) up to degree four.

Averages are evaluated with the Weingarten permutation sum

    <U_{i1 j1} ... U_{iq jq} conj(U_{i'1 j'1}) ... conj(U_{i'q j'q})>
        = sum_{sigma, tau in S_q} prod_k d(i_k, i'_sigma(k)) d(j_k, j'_tau(k)) Wg(sigma tau^-1, n)

in exact rational arithmetic. The second half of the module carries the
bookkeeping for the second-order (in the free Hamiltonian) correction to the
qubit contraction factor: the fifteen set partitions of four eigenvector
labels, the row-weight vector ``C``, and the contracted vectors
``C^T M^(1)`` and ``C^T M^(2)``, together with an enumeration oracle that
rebuilds the latter from scratch.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import permutations, product
from typing import Sequence

from .errors import ConfigError

__all__ = [
    "Partition",
    "MonomialSpec",
    "RationalVector15",
    "enumerate_partitions",
    "cycle_type",
    "weingarten",
    "haar_monomial_average",
    "c_factors",
    "ctm_vectors",
    "brute_force_ctm",
    "MAX_DEGREE",
    "BRUTE_FORCE_MAX_N",
]

MAX_DEGREE = 4
BRUTE_FORCE_MAX_N = 6

GREEK = ("α", "β", "γ", "δ")

# Blocks over the eigenvector labels (0, 1, 2, 3) = (alpha, beta, gamma, delta),
# listed in the fixed order 1..15 used throughout.
_PARTITION_BLOCKS = (
    ((0, 1, 2, 3),),
    ((0, 1, 2), (3,)),
    ((0, 1, 3), (2,)),
    ((0, 2, 3), (1,)),
    ((0,), (1, 2, 3)),
    ((0, 1), (2, 3)),
    ((0, 2), (1, 3)),
    ((0, 3), (1, 2)),
    ((0, 1), (2,), (3,)),
    ((0, 2), (1,), (3,)),
    ((0, 3), (1,), (2,)),
    ((1, 2), (0,), (3,)),
    ((1, 3), (0,), (2,)),
    ((2, 3), (0,), (1,)),
    ((0,), (1,), (2,), (3,)),
)


@dataclass(frozen=True)
class Partition:
    label: int
    blocks: tuple

    @property
    def n_blocks(self) -> int:
        return len(self.blocks)

    def representative(self) -> tuple:
        """One label assignment in this class: block ``b`` gets value ``b``."""
        values = [0] * 4
        for value, block in enumerate(self.blocks):
            for k in block:
                values[k] = value
        return tuple(values)

    def multiplicity(self, n: int) -> int:
        """Number of assignments of values in ``range(n)`` falling in this class."""
        out = 1
        for k in range(self.n_blocks):
            out *= n - k
        return max(out, 0)

    def matches(self, values: Sequence) -> bool:
        """True when ``values`` (one per label) realize exactly this partition."""
        return _canonical_blocks(values) == _canonical_blocks(self.representative())

    def describe(self) -> str:
        parts = [" = ".join(GREEK[k] for k in block) for block in self.blocks]
        return " ≠ ".join(parts)


def _canonical_blocks(values) -> frozenset:
    groups = {}
    for k, v in enumerate(values):
        groups.setdefault(v, []).append(k)
    return frozenset(tuple(g) for g in groups.values())


_PARTITIONS = tuple(Partition(i + 1, blocks) for i, blocks in enumerate(_PARTITION_BLOCKS))


def enumerate_partitions() -> list:
    return list(_PARTITIONS)


def partition_of(values: Sequence) -> Partition:
    """The partition realized by a concrete 4-tuple of labels."""
    key = _canonical_blocks(values)
    for p in _PARTITIONS:
        if _canonical_blocks(p.representative()) == key:
            return p
    raise ValueError(f"no partition for {values!r}")


class RationalVector15(tuple):
    """Fifteen exact rationals addressed by partition label (1-based)."""

    def __new__(cls, values):
        values = tuple(Fraction(v) for v in values)
        if len(values) != 15:
            raise ValueError(f"expected 15 entries, got {len(values)}")
        return super().__new__(cls, values)

    def at(self, label: int) -> Fraction:
        return self[label - 1]

    def to_floats(self) -> list:
        return [float(v) for v in self]


@dataclass(frozen=True)
class MonomialSpec:
    """Index data for ``prod_k U[rows[k], cols[k]] * prod_k conj(U[conj_rows[k], conj_cols[k]])``."""

    rows: tuple
    cols: tuple
    conj_rows: tuple
    conj_cols: tuple

    def __post_init__(self):
        q = len(self.rows)
        if not (len(self.cols) == len(self.conj_rows) == len(self.conj_cols) == q):
            raise ConfigError("monomial needs equally many U and conj(U) factors")

    @property
    def degree(self) -> int:
        return len(self.rows)

    def selection_rule_holds(self) -> bool:
        return sorted(self.rows) == sorted(self.conj_rows) and sorted(self.cols) == sorted(self.conj_cols)


def cycle_type(perm: Sequence[int]) -> tuple:
    seen = [False] * len(perm)
    lengths = []
    for start in range(len(perm)):
        if seen[start]:
            continue
        length, k = 0, start
        while not seen[k]:
            seen[k] = True
            k = perm[k]
            length += 1
        lengths.append(length)
    return tuple(sorted(lengths, reverse=True))


def _wg_table(q: int, n: int) -> dict:
    """Closed-form Weingarten function for ``n >= q``, keyed by cycle type."""
    n = Fraction(n)
    if q == 0:
        return {(): Fraction(1)}
    if q == 1:
        return {(1,): 1 / n}
    if q == 2:
        d = n * (n * n - 1)
        return {(1, 1): n / d, (2,): -1 / d}
    if q == 3:
        d = n * (n * n - 1) * (n * n - 4)
        return {(1, 1, 1): (n * n - 2) / d, (2, 1): -n / d, (3,): 2 / d}
    if q == 4:
        d = n * n * (n * n - 1) * (n * n - 4) * (n * n - 9)
        return {
            (1, 1, 1, 1): (n**4 - 8 * n * n + 6) / d,
            (2, 1, 1): (-(n**3) + 4 * n) / d,
            (2, 2): (n * n + 6) / d,
            (3, 1): (2 * n * n - 3) / d,
            (4,): -5 * n / d,
        }
    raise ConfigError(f"Weingarten table only covers degree <= {MAX_DEGREE}, got {q}")


def _compose(a, b):
    return tuple(a[b[k]] for k in range(len(a)))


def _inverse(a):
    out = [0] * len(a)
    for k, v in enumerate(a):
        out[v] = k
    return tuple(out)


@lru_cache(maxsize=None)
def _wg_pseudo_inverse(q: int, n: int) -> dict:
    # for n < q the Gram matrix n^{#cycles(sigma tau^-1)} is singular; its
    # Moore-Penrose inverse still yields the correct averages
    import sympy

    perms = list(permutations(range(q)))
    gram = sympy.Matrix(
        len(perms),
        len(perms),
        lambda i, j: sympy.Integer(n) ** len(cycle_type(_compose(perms[i], _inverse(perms[j])))),
    )
    inv = gram.pinv()
    identity_col = perms.index(tuple(range(q)))
    out = {}
    for i, p in enumerate(perms):
        value = sympy.Rational(inv[i, identity_col])
        out[cycle_type(p)] = Fraction(int(value.p), int(value.q))
    return out


@lru_cache(maxsize=None)
def _wg_by_type(q: int, n: int) -> dict:
    if q > MAX_DEGREE:
        raise ConfigError(f"unsupported monomial degree {q} (max {MAX_DEGREE})")
    if n < 1:
        raise ConfigError(f"group dimension must be positive, got {n}")
    if n >= q:
        return _wg_table(q, n)
    return _wg_pseudo_inverse(q, n)


def weingarten(perm: Sequence[int], n: int) -> Fraction:
    return _wg_by_type(len(perm), n)[cycle_type(perm)]


def _matching_perms(left, right) -> tuple:
    q = len(left)
    return tuple(s for s in permutations(range(q)) if all(left[k] == right[s[k]] for k in range(q)))


@lru_cache(maxsize=None)
def _perm_pair_sum(row_perms: tuple, col_perms: tuple, n: int) -> Fraction:
    if not row_perms or not col_perms:
        return Fraction(0)
    table = _wg_by_type(len(row_perms[0]), n)
    total = Fraction(0)
    for s in row_perms:
        for t in col_perms:
            total += table[cycle_type(_compose(s, _inverse(t)))]
    return total


def haar_monomial_average(m: MonomialSpec, n: int) -> Fraction:
    """Exact Haar average of the monomial over U(n)."""
    if m.degree > MAX_DEGREE:
        raise ConfigError(f"unsupported monomial degree {m.degree} (max {MAX_DEGREE})")
    for idx in m.rows + m.cols + m.conj_rows + m.conj_cols:
        if not 0 <= idx < n:
            raise ConfigError(f"index {idx} out of range for U({n})")
    if m.degree == 0:
        return Fraction(1)
    if not m.selection_rule_holds():
        return Fraction(0)
    row_perms = _matching_perms(m.rows, m.conj_rows)
    col_perms = _matching_perms(m.cols, m.conj_cols)
    return _perm_pair_sum(row_perms, col_perms, n)


def c_factors(N: int) -> RationalVector15:
    """Row-weight vector: qubit signs and ``<eps_j eps_k>`` summed per row partition.

    ``C_I`` is the sum of ``z(r1) z(r2) <eps(r3) eps(r4)>`` over all row
    tuples whose pattern, read in the order ``(r2, r3, r4, r1)``, is
    partition ``I``. Entry 12 is ``-4N(N-1)``: this value (not ``-4(N-1)``)
    makes ``C^T M^(1)`` reproduce :func:`ctm_vectors`.
    """
    if N < 1:
        raise ConfigError(f"N must be >= 1, got {N}")
    N = Fraction(N)
    a = 2 * N
    b = 4 * (N - 1)
    return RationalVector15(
        [
            a,
            -a,
            -2 * (N - 2),
            -2 * (N - 2),
            -a,
            -a,
            -a,
            2 * N * (2 * N - 1),
            b,
            b,
            -4 * (N - 1) * (N - 2),
            -N * b,
            b,
            b,
            4 * (N - 1) * (N - 4),
        ]
    )


def ctm_vectors(N: int):
    """Closed forms of ``C^T M^(1)`` and ``C^T M^(2)`` for environment dimension ``N``.

    The derivation assumes ``2N >= 4`` (no Weingarten poles). ``N = 1``
    still evaluates, since no denominator vanishes, but only the first entry
    then agrees with the exact U(2) averages; a warning is issued.
    """
    if int(N) != N or N < 1:
        raise ConfigError(f"N must be a positive integer, got {N}")
    if N == 1:
        warnings.warn("ctm_vectors(1) extrapolates the closed forms below their range of validity", stacklevel=2)
    N = Fraction(int(N))
    pre = 1 / (N * (2 * N + 1) * (2 * N + 3))
    d = 2 * N - 1
    g = (2 * N * N + 2 * N + 1) / (2 * N * d)
    v1 = [
        N + 4,
        (N - 1) / d,
        2 * (N - 1) * (N + 2) / d,
        (N - 1) / d,
        2 * (N * N + 3 * N + 1) / d,
        -(N - 1) / (N * d),
        (N - 1) * (N + 2) * (2 * N + 1) / (N * d),
        -(N - 1) / (N * d),
        -(N - 1) / (2 * N * d),
        -(3 * N + 2) / (2 * N * d),
        -(N - 1) / (2 * N * d),
        -(N - 1) / (2 * N * d),
        (4 * N**3 + 6 * N**2 - 3 * N - 2) / (2 * N * d),
        -(N - 1) / (2 * N * d),
        Fraction(5) / (2 * (2 * N - 3) * d),
    ]
    v2 = [
        N + 4,
        (N - 1) / d,
        (N - 1) / d,
        (N - 1) / d,
        (N - 1) / d,
        -(N - 1) / (N * d),
        2 * (N - 1) * (N + 1) / (N * d),
        (N + 1) * (4 * N + 1) / (N * d),
        g,
        (N - 1) * (N + 1) / (N * d),
        g,
        g,
        (N - 1) * (N + 1) / (N * d),
        g,
        2 * (N - 1) * (N + 1) / ((2 * N - 3) * d),
    ]
    return RationalVector15(x * pre for x in v1), RationalVector15(x * pre for x in v2)


def brute_force_ctm(N: int, qubit_signs: bool = True):
    """Rebuild ``C^T M^(1)`` and ``C^T M^(2)`` by explicit index enumeration.

    Both correction terms reduce to the same degree-4 monomial in the
    eigenvector matrix ``O`` of the coupling,

        O[r1, a] conj(O[r2, a]) O[r2, b] conj(O[r3, b])
        O[r3, g] conj(O[r4, g]) O[r4, d] conj(O[r1, d]),

    with rows ``r = (qubit, env)`` of the 2N-dimensional space. They differ
    only in where sigma_z and the environment Hamiltonian sit:

        term 1: sigma_z on r1, r2;  H_e on r3, r4
        term 2: sigma_z on r2, r4;  H_e on r3, r1

    Each row 4-tuple is weighted by the qubit signs and by
    ``<eps_j eps_k>`` (1 for equal environment indices, -1/N otherwise),
    and the Haar average is taken with the columns fixed to a representative
    of each eigenvector partition. ``qubit_signs=False`` drops the sign
    factor; it exists to show that the sign bookkeeping matters.
    """
    if int(N) != N or N < 1:
        raise ConfigError(f"N must be a positive integer, got {N}")
    if N > BRUTE_FORCE_MAX_N:
        raise ConfigError(f"brute_force_ctm is combinatorial; N <= {BRUTE_FORCE_MAX_N} required, got {N}")
    n = 2 * N
    minus_one_over_n = Fraction(-1, N)

    def sign(r):
        if not qubit_signs:
            return 1
        return 1 if r < N else -1

    def env_corr(r, s):
        return Fraction(1) if r % N == s % N else minus_one_over_n

    col_perms = []
    for p in _PARTITIONS:
        c = p.representative()
        col_perms.append(_matching_perms(c, c))

    out1 = [Fraction(0)] * 15
    out2 = [Fraction(0)] * 15
    for r1, r2, r3, r4 in product(range(n), repeat=4):
        row_perms = _matching_perms((r1, r2, r3, r4), (r2, r3, r4, r1))
        if not row_perms:
            continue
        w1 = sign(r1) * sign(r2) * env_corr(r3, r4)
        w2 = sign(r2) * sign(r4) * env_corr(r3, r1)
        for k in range(15):
            avg = _perm_pair_sum(row_perms, col_perms[k], n)
            if avg:
                out1[k] += w1 * avg
                out2[k] += w2 * avg
    return RationalVector15(out1), RationalVector15(out2)
