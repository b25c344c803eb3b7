"""Dense and sparse linear-algebra kernels shared by the rest of the package.

Sparse matrices are SciPy CSR throughout; this module adds the validated
constructors, factorization and eigensolver entry points the assembly and
analysis code relies on.  Everything returned here is immutable by
convention: callers must not mutate matrices or factor objects after
construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg
from scipy.sparse import csr_matrix

# Dense eigensolves beyond this size are refused: the analysis paths that
# need full spectra are desk-scale by design.
DENSE_EIG_CAP = 4096

__all__ = [
    "DENSE_EIG_CAP",
    "EigResult",
    "LUFactors",
    "SingularMatrixError",
    "csr_from_coo",
    "gen_sym_eig",
    "lu_solve",
    "require_symmetric",
    "sparse_lu",
    "spmv",
    "sym_eig",
]


class SingularMatrixError(np.linalg.LinAlgError):
    """Raised when a sparse factorization meets a zero pivot."""


def csr_from_coo(nrows, ncols, rows, cols, vals) -> csr_matrix:
    """Build a CSR matrix from triplets: duplicates summed, columns sorted.

    All assembly routines funnel through here so the stored layout is
    deterministic regardless of the insertion order of the triplets.
    """
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    vals = np.asarray(vals, dtype=np.float64)
    if rows.size and (rows.min() < 0 or rows.max() >= nrows):
        raise ValueError("row index out of range")
    if cols.size and (cols.min() < 0 or cols.max() >= ncols):
        raise ValueError("column index out of range")
    mat = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(nrows, ncols))
    mat = mat.tocsr()
    mat.sum_duplicates()
    mat.sort_indices()
    if not np.all(np.isfinite(mat.data)):
        raise ValueError("non-finite entries in assembled matrix")
    return mat


def spmv(mat: csr_matrix, x: np.ndarray) -> np.ndarray:
    """Sparse matrix times vector with an explicit shape check."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] != mat.shape[1]:
        raise ValueError(
            f"dimension mismatch: matrix has {mat.shape[1]} columns, "
            f"vector has length {x.shape[0]}"
        )
    return mat @ x


@dataclass(frozen=True)
class LUFactors:
    """Sparse LU factorization (partial pivoting) of a square matrix."""

    shape: tuple[int, int]
    _solver: scipy.sparse.linalg.SuperLU

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=np.float64)
        if b.shape[0] != self.shape[0]:
            raise ValueError("right-hand side length does not match factor size")
        return self._solver.solve(b)


def _locate_zero_pivot(mat: csr_matrix) -> int:
    """Identify the first failing pivot row of a singular matrix.

    Runs a dense partial-pivoting LU; only called on factorization failure,
    so the dense fallback cost is acceptable.
    """
    dense = mat.toarray()
    _, u = scipy.linalg.lu(dense, permute_l=True)
    diag = np.abs(np.diag(u))
    bad = np.flatnonzero(diag <= diag.max() * np.finfo(float).eps * mat.shape[0])
    return int(bad[0]) if bad.size else mat.shape[0] - 1


def sparse_lu(mat: csr_matrix) -> LUFactors:
    """Factor a square sparse matrix with partial pivoting."""
    if mat.shape[0] != mat.shape[1]:
        raise ValueError("sparse_lu requires a square matrix")
    try:
        solver = scipy.sparse.linalg.splu(mat.tocsc(), diag_pivot_thresh=1.0)
    except RuntimeError as exc:
        row = _locate_zero_pivot(mat)
        raise SingularMatrixError(
            f"singular matrix: zero pivot at row {row}"
        ) from exc
    # SuperLU can succeed structurally yet return NaN/inf columns for a
    # numerically singular matrix; probe once.
    probe = solver.solve(np.ones(mat.shape[0]))
    if not np.all(np.isfinite(probe)):
        row = _locate_zero_pivot(mat)
        raise SingularMatrixError(f"singular matrix: zero pivot at row {row}")
    return LUFactors(shape=mat.shape, _solver=solver)


def lu_solve(factors: LUFactors, b: np.ndarray) -> np.ndarray:
    return factors.solve(b)


@dataclass(frozen=True)
class EigResult:
    """Full spectrum, eigenvalues ascending, eigenvector columns paired."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray


def require_symmetric(mat: np.ndarray, rtol: float = 1e-12, name: str = "matrix") -> np.ndarray:
    """Check relative symmetry and return the symmetrized matrix."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    scale = max(np.abs(mat).max(), 1.0)
    asym = np.abs(mat - mat.T).max()
    if asym > rtol * scale:
        raise ValueError(f"{name} is not symmetric: |A - A^T| = {asym:.3e}")
    return 0.5 * (mat + mat.T)


def _check_eig_size(n: int) -> None:
    if n > DENSE_EIG_CAP:
        raise ValueError(f"dense eigensolve refused for dimension {n} > {DENSE_EIG_CAP}")


def sym_eig(mat: np.ndarray) -> EigResult:
    """Full symmetric eigendecomposition, eigenvalues ascending."""
    mat = require_symmetric(mat)
    _check_eig_size(mat.shape[0])
    vals, vecs = scipy.linalg.eigh(mat)
    return EigResult(eigenvalues=vals, eigenvectors=vecs)


def gen_sym_eig(mat_a: np.ndarray, mat_b: np.ndarray) -> EigResult:
    """Eigenvalues of the pencil (A, B) with A symmetric and B SPD.

    B is factorized and the problem reduced to a standard symmetric one;
    eigenvalues therefore match those of any congruence-transformed pair.
    """
    mat_a = require_symmetric(mat_a, name="A")
    mat_b = require_symmetric(mat_b, name="B")
    if mat_a.shape != mat_b.shape:
        raise ValueError("pencil matrices must share their shape")
    _check_eig_size(mat_a.shape[0])
    try:
        vals, vecs = scipy.linalg.eigh(mat_a, mat_b)
    except scipy.linalg.LinAlgError as exc:
        raise ValueError("B must be positive definite") from exc
    return EigResult(eigenvalues=vals, eigenvectors=vecs)
