"""Polynomial chaos combinatorics for normalized Hermite bases.

Multi-index sets of bounded total degree, expectation tensors of triple
products of basis polynomials, and the degree-level partition that the
hierarchical preconditioner sweeps over.  The random variables are i.i.d.
standard Gaussian, so the univariate building block is the probabilists'
Hermite family normalized to unit variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix, identity

from .linalg import csr_from_coo

__all__ = [
    "LevelPartition",
    "MultiIndexSet",
    "TripleProductSet",
    "build_triple_products",
    "enumerate_multi_indices",
    "level_partition",
    "univariate_triple",
]


@dataclass(frozen=True)
class MultiIndexSet:
    """Graded multi-index set of total degree <= p in m_xi variables.

    Indices are ordered by total degree; within one degree block the order
    is lexicographically descending, so the first variable's exponent
    decreases first.  The zero tuple (the constant polynomial) always comes
    first.
    """

    m_xi: int
    p: int
    indices: tuple[tuple[int, ...], ...]

    @property
    def size(self) -> int:
        return len(self.indices)

    def degree_sizes(self) -> list[int]:
        """Number of indices of each exact degree d = 0..p."""
        counts = [0] * (self.p + 1)
        for idx in self.indices:
            counts[sum(idx)] += 1
        return counts

    def as_array(self) -> np.ndarray:
        return np.array(self.indices, dtype=np.int64)


def _indices_of_degree(m: int, d: int):
    """All m-tuples of nonnegative integers summing to d, first entry descending."""
    if m == 1:
        yield (d,)
        return
    for first in range(d, -1, -1):
        for rest in _indices_of_degree(m - 1, d - first):
            yield (first,) + rest


def enumerate_multi_indices(m_xi: int, p: int) -> MultiIndexSet:
    if m_xi < 1:
        raise ValueError("need at least one random variable")
    if p < 0:
        raise ValueError("degree must be nonnegative")
    indices: list[tuple[int, ...]] = []
    for d in range(p + 1):
        indices.extend(_indices_of_degree(m_xi, d))
    out = MultiIndexSet(m_xi=m_xi, p=p, indices=tuple(indices))
    assert out.size == math.comb(m_xi + p, p)
    return out


def univariate_triple(i: int, j: int, k: int) -> float:
    """Expectation of a product of three normalized Hermite polynomials.

    Nonzero only when i + j + k is even and the three degrees satisfy the
    triangle inequality; the closed form is
    sqrt(i! j! k!) / ((s-i)! (s-j)! (s-k)!) with s = (i + j + k) / 2.
    """
    if i < 0 or j < 0 or k < 0:
        raise ValueError("degrees must be nonnegative")
    total = i + j + k
    if total % 2 != 0:
        return 0.0
    s = total // 2
    if s < i or s < j or s < k:
        return 0.0
    num = math.factorial(i) * math.factorial(j) * math.factorial(k)
    den = math.factorial(s - i) * math.factorial(s - j) * math.factorial(s - k)
    return math.sqrt(num) / den


@dataclass(frozen=True)
class TripleProductSet:
    """Expectation tensors coupling the solution basis through a coefficient basis.

    ``matrices[l]`` holds the expectations E[psi_l psi_j psi_k] over the
    solution basis (j, k) for the l-th coefficient index; the first one is
    always the identity because the first basis function is the constant 1.
    ``variance_penalty`` is that identity with its (0, 0) entry zeroed and
    ``objective_weight`` the diagonal combination identity + gamma *
    variance_penalty used to weight the state-tracking block.
    """

    matrices: list[csr_matrix]
    variance_penalty: csr_matrix
    objective_weight: csr_matrix
    gamma: float

    @property
    def n_terms(self) -> int:
        return len(self.matrices)

    @property
    def size(self) -> int:
        return self.matrices[0].shape[0]

    @property
    def weight_diagonal(self) -> np.ndarray:
        return self.objective_weight.diagonal()


def build_triple_products(
    basis: MultiIndexSet, coeff_indices: MultiIndexSet, gamma: float = 1.0
) -> TripleProductSet:
    """Assemble all coefficient-coupling matrices as sparse CSR.

    Exact zeros of the closed form are dropped; no floating-point threshold
    is applied.
    """
    if basis.m_xi != coeff_indices.m_xi:
        raise ValueError("basis and coefficient indices use different variable counts")
    if gamma < 0:
        raise ValueError("gamma must be nonnegative")
    n = basis.size
    basis_arr = basis.as_array()  # (n, m)
    max_coeff = max((max(idx) for idx in coeff_indices.indices), default=0)
    max_basis = int(basis_arr.max()) if n else 0
    table = np.zeros((max_coeff + 1, max_basis + 1, max_basis + 1))
    for i in range(max_coeff + 1):
        for j in range(max_basis + 1):
            for k in range(max_basis + 1):
                table[i, j, k] = univariate_triple(i, j, k)

    matrices = []
    cols_j = basis_arr[:, None, :]  # (n, 1, m)
    cols_k = basis_arr[None, :, :]  # (1, n, m)
    for ell in coeff_indices.indices:
        prod = np.ones((n, n))
        for v, deg in enumerate(ell):
            prod *= table[deg, cols_j[:, :, v], cols_k[:, :, v]]
        rows, cols = np.nonzero(prod)
        matrices.append(csr_from_coo(n, n, rows, cols, prod[rows, cols]))

    eye = identity(n, format="csr")
    variance_penalty = csr_from_coo(
        n, n, np.arange(1, n), np.arange(1, n), np.ones(n - 1)
    ) if n > 1 else csr_from_coo(n, n, [], [], [])
    weight = eye + gamma * variance_penalty
    return TripleProductSet(
        matrices=matrices,
        variance_penalty=variance_penalty,
        objective_weight=weight.tocsr(),
        gamma=float(gamma),
    )


@dataclass(frozen=True)
class LevelPartition:
    """Column counts closing each degree level of a graded basis."""

    boundaries: tuple[int, ...]

    @property
    def n_levels(self) -> int:
        return len(self.boundaries)

    def ranges(self) -> list[tuple[int, int]]:
        """Half-open 0-based column ranges, one per degree level."""
        out = []
        lo = 0
        for hi in self.boundaries:
            out.append((lo, hi))
            lo = hi
        return out


def level_partition(basis: MultiIndexSet) -> LevelPartition:
    bounds = tuple(math.comb(basis.m_xi + d, d) for d in range(basis.p + 1))
    part = LevelPartition(boundaries=bounds)
    sizes = basis.degree_sizes()
    assert [hi - lo for lo, hi in part.ranges()] == sizes
    return part
