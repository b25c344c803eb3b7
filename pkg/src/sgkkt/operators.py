"""Matricized Kronecker operator algebra and the KKT systems built from it.

A coefficient vector of length N_h * N_xi is identified with the N_h x N_xi
matrix whose column k holds the coefficients of the k-th stochastic basis
function; all operators act on that matricized form, so a sum of Kronecker
products H_l (x) A_l is applied as sum_l A_l X H_l without ever forming the
large matrix.  Time-dependent problems stack one such state per time step,
ordered [all y steps, all u steps, all adjoint steps].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse import csr_matrix

from .basis import TripleProductSet
from .linalg import csr_from_coo

__all__ = [
    "KroneckerSumOperator",
    "SteadyKKT",
    "TimeKKT",
    "TimeStencil",
    "build_time_stencil",
    "join_time_blocks",
    "kron_apply",
    "kron_apply_sliced",
    "matricize",
    "right_multiply",
    "split_time_blocks",
    "steady_kkt_apply",
    "steady_rhs",
    "time_kkt_apply",
    "time_rhs",
    "vectorize",
]


def matricize(v: np.ndarray, n_h: int, n_xi: int) -> np.ndarray:
    """Column-major reshape of a coefficient vector to its N_h x N_xi form."""
    v = np.asarray(v, dtype=np.float64)
    if v.size != n_h * n_xi:
        raise ValueError(f"expected length {n_h * n_xi}, got {v.size}")
    return v.reshape((n_h, n_xi), order="F")


def vectorize(x: np.ndarray) -> np.ndarray:
    return np.asarray(x).reshape(-1, order="F")


def right_multiply(x: np.ndarray, h: csr_matrix) -> np.ndarray:
    """Dense-times-sparse product x @ h staying in the sparse fast path."""
    return (h.T @ x.T).T


@dataclass(frozen=True)
class KroneckerSumOperator:
    """Sum of Kronecker products sum_l couplings[l] (x) operators[l]."""

    couplings: list[csr_matrix]
    operators: list[csr_matrix]

    def __post_init__(self):
        if len(self.couplings) != len(self.operators):
            raise ValueError("term counts differ")
        if not self.couplings:
            raise ValueError("need at least one term")
        n_xi = self.couplings[0].shape[0]
        n_h = self.operators[0].shape[0]
        for h in self.couplings:
            if h.shape != (n_xi, n_xi):
                raise ValueError("coupling matrices must share their size")
        for a in self.operators:
            if a.shape != (n_h, n_h):
                raise ValueError("operator matrices must share their size")

    @property
    def n_terms(self) -> int:
        return len(self.couplings)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.operators[0].shape[0], self.couplings[0].shape[0])


def kron_apply(op: KroneckerSumOperator, x: np.ndarray) -> np.ndarray:
    """Apply the Kronecker sum to a matricized state."""
    n_h, n_xi = op.shape
    if x.shape != (n_h, n_xi):
        raise ValueError(f"state shape {x.shape} does not match operator {op.shape}")
    out = np.zeros_like(x)
    for h, a in zip(op.couplings, op.operators):
        out += right_multiply(a @ x, h)
    return out


def kron_apply_sliced(
    op: KroneckerSumOperator,
    x: np.ndarray,
    src_cols: tuple[int, int],
    dst_cols: tuple[int, int],
    n_trunc: int,
) -> np.ndarray:
    """Truncated partial product feeding columns src_cols into dst_cols.

    Only the leading ``n_trunc`` terms contribute; the coupling matrices are
    sliced to the requested row/column ranges, so terms without entries in
    the slice cost nothing.
    """
    slo, shi = src_cols
    dlo, dhi = dst_cols
    n_h, n_xi = op.shape
    if not (0 <= slo <= shi <= n_xi and 0 <= dlo <= dhi <= n_xi):
        raise ValueError("column ranges out of bounds")
    if not 1 <= n_trunc <= op.n_terms:
        raise ValueError("truncation count out of range")
    out = np.zeros((n_h, dhi - dlo))
    if slo == shi or dlo == dhi:
        return out
    for h, a in zip(op.couplings[:n_trunc], op.operators[:n_trunc]):
        h_slice = h[slo:shi, dlo:dhi]
        if h_slice.nnz:
            out += right_multiply(a @ x[:, slo:shi], h_slice)
    return out


@dataclass(frozen=True)
class SteadyKKT:
    """Steady optimal-control KKT operator in matricized block form.

    Block rows act on the state Y, control U, adjoint L (each N_h x N_xi):

        [ weighted mass   0            -coupled stiffness^T ] [Y]
        [ 0               beta * mass   mass                ] [U]
        [ -coupled stiff  mass          0                   ] [L]
    """

    mass: csr_matrix
    stiffness: list[csr_matrix]
    triple: TripleProductSet
    beta: float
    gamma: float
    target: np.ndarray  # Y_d, (n_h, n_xi)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")
        if abs(self.gamma - self.triple.gamma) > 1e-14:
            raise ValueError("gamma disagrees with the triple-product weights")
        if len(self.stiffness) > self.triple.n_terms:
            raise ValueError("more stiffness terms than coupling matrices")
        if self.target.shape != (self.n_h, self.n_xi):
            raise ValueError("target shape does not match the system")

    @property
    def n_h(self) -> int:
        return self.mass.shape[0]

    @property
    def n_xi(self) -> int:
        return self.triple.size

    @property
    def n_terms(self) -> int:
        return len(self.stiffness)

    def stiffness_operator(self) -> KroneckerSumOperator:
        return KroneckerSumOperator(
            couplings=self.triple.matrices[: self.n_terms],
            operators=self.stiffness,
        )

    def block_size(self) -> int:
        return self.n_h * self.n_xi


def steady_kkt_apply(
    sys: SteadyKKT, y: np.ndarray, u: np.ndarray, lam: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """The three block rows of the KKT operator."""
    shape = (sys.n_h, sys.n_xi)
    for name, blk in (("y", y), ("u", u), ("lam", lam)):
        if blk.shape != shape:
            raise ValueError(f"block {name} has shape {blk.shape}, expected {shape}")
    a_op = sys.stiffness_operator()
    mass_y = sys.mass @ y
    r_y = mass_y * sys.triple.weight_diagonal[None, :] - kron_apply(a_op, lam)
    r_u = sys.beta * (sys.mass @ u) + sys.mass @ lam
    r_lam = -kron_apply(a_op, y) + sys.mass @ u
    return r_y, r_u, r_lam


def steady_rhs(sys: SteadyKKT) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Right-hand side blocks (tracking term, zero, zero boundary data)."""
    b_y = sys.mass @ sys.target
    zero = np.zeros((sys.n_h, sys.n_xi))
    return b_y, zero, zero.copy()


@dataclass(frozen=True)
class TimeStencil:
    """Implicit-Euler time coupling and trapezoid quadrature weights on [0, 1]."""

    n_t: int
    tau: float
    coupling: csr_matrix  # -1 on the first subdiagonal
    weights: np.ndarray  # trapezoid diagonal (1/2, 1, ..., 1, 1/2)


def build_time_stencil(n_t: int) -> TimeStencil:
    if n_t < 1:
        raise ValueError("need at least one time step")
    tau = 1.0 / n_t
    idx = np.arange(1, n_t)
    coupling = csr_from_coo(n_t, n_t, idx, idx - 1, -np.ones(n_t - 1))
    weights = np.ones(n_t)
    weights[0] = 0.5
    weights[-1] = 0.5
    return TimeStencil(n_t=n_t, tau=tau, coupling=coupling, weights=weights)


@dataclass(frozen=True)
class TimeKKT:
    """All-at-once KKT operator of the time-dependent control problem."""

    steady: SteadyKKT
    stencil: TimeStencil
    initial_state: np.ndarray  # y at t = 0, (n_h, n_xi)

    def __post_init__(self):
        if self.initial_state.shape != (self.steady.n_h, self.steady.n_xi):
            raise ValueError("initial state shape does not match the system")

    @property
    def n_t(self) -> int:
        return self.stencil.n_t

    @property
    def tau(self) -> float:
        return self.stencil.tau

    def block_size(self) -> int:
        return self.n_t * self.steady.block_size()


def _step_operator_apply(sys: TimeKKT, x: np.ndarray) -> np.ndarray:
    """Single-step forward operator: mass + tau * coupled stiffness."""
    st = sys.steady
    return st.mass @ x + sys.tau * kron_apply(st.stiffness_operator(), x)


def split_time_blocks(sys: TimeKKT, v: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Split a packed all-at-once vector into (y, u, lam) step arrays.

    Each returned array has shape (n_t, n_h, n_xi).
    """
    st = sys.steady
    size = sys.block_size()
    v = np.asarray(v, dtype=np.float64)
    if v.size != 3 * size:
        raise ValueError(f"expected length {3 * size}, got {v.size}")
    out = []
    for blk in range(3):
        seg = v[blk * size : (blk + 1) * size]
        steps = np.empty((sys.n_t, st.n_h, st.n_xi))
        per = st.block_size()
        for k in range(sys.n_t):
            steps[k] = matricize(seg[k * per : (k + 1) * per], st.n_h, st.n_xi)
        out.append(steps)
    return out[0], out[1], out[2]


def join_time_blocks(y: np.ndarray, u: np.ndarray, lam: np.ndarray) -> np.ndarray:
    parts = []
    for steps in (y, u, lam):
        parts.extend(vectorize(steps[k]) for k in range(steps.shape[0]))
    return np.concatenate(parts)


def time_kkt_apply(sys: TimeKKT, v: np.ndarray) -> np.ndarray:
    """Apply the all-at-once KKT operator to a packed vector."""
    y, u, lam = split_time_blocks(sys, v)
    st = sys.steady
    tau = sys.tau
    w = sys.stencil.weights
    n_t = sys.n_t

    r_y = np.empty_like(y)
    r_u = np.empty_like(u)
    r_lam = np.empty_like(lam)
    wd = st.triple.weight_diagonal[None, :]
    for k in range(n_t):
        # transpose of the forward operator couples step k to step k+1
        at_lam = _step_operator_apply(sys, lam[k])
        if k + 1 < n_t:
            at_lam -= st.mass @ lam[k + 1]
        r_y[k] = tau * w[k] * ((st.mass @ y[k]) * wd) - at_lam

        r_u[k] = st.beta * tau * w[k] * (st.mass @ u[k]) + tau * (st.mass @ lam[k])

        a_y = _step_operator_apply(sys, y[k])
        if k > 0:
            a_y -= st.mass @ y[k - 1]
        r_lam[k] = -a_y + tau * (st.mass @ u[k])
    return join_time_blocks(r_y, r_u, r_lam)


def time_rhs(sys: TimeKKT) -> np.ndarray:
    """Packed right-hand side: weighted tracking data, zero, initial data."""
    st = sys.steady
    tau = sys.tau
    w = sys.stencil.weights
    b_y = np.empty((sys.n_t, st.n_h, st.n_xi))
    mass_target = st.mass @ st.target
    for k in range(sys.n_t):
        b_y[k] = tau * w[k] * mass_target
    b_u = np.zeros_like(b_y)
    b_lam = np.zeros_like(b_y)
    b_lam[0] = st.mass @ sys.initial_state
    return join_time_blocks(b_y, b_u, b_lam)
