"""Preconditioner family for the stochastic Galerkin KKT systems.

Three layers compose here.  Mass-matrix blocks are inverted approximately by
a Chebyshev semi-iteration whose spectral interval [1/4, 9/4] is the
classical bound for the diagonally scaled Q1 mass matrix, or exactly by a
direct factorization.  Kronecker-sum solves are approximated by a symmetric
hierarchical Gauss-Seidel sweep over polynomial-degree column blocks, each
block solved with the factored lead term and corrected by truncated
cross-block products, optionally wrapped in a preconditioned Richardson
iteration.  The KKT-level preconditioners assemble those pieces into the
block-diagonal steady preconditioner, its parallel-in-time counterpart
(independent per time step), and the coupled sweep that solves a small
deterministic KKT system per degree level.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
import scipy.sparse
from scipy.sparse import csr_matrix

from .basis import LevelPartition
from .linalg import LUFactors, sparse_lu
from .operators import (
    KroneckerSumOperator,
    SteadyKKT,
    TimeKKT,
    join_time_blocks,
    kron_apply,
    right_multiply,
    split_time_blocks,
)

__all__ = [
    "CHEB_LAMBDA_MAX",
    "CHEB_LAMBDA_MIN",
    "ChebyshevConfig",
    "CoupledSweepPreconditioner",
    "HierarchicalGaussSeidel",
    "SteadyKKTPreconditioner",
    "TimeKKTPreconditioner",
    "chebyshev_mass_solve",
    "hgs_apply",
    "make_mass_solver",
    "richardson_hgs",
    "shifted_lead_terms",
    "time_lead_terms",
]

CHEB_LAMBDA_MIN = 0.25
CHEB_LAMBDA_MAX = 2.25
_CHEB_ALPHA = 0.5 * (CHEB_LAMBDA_MIN + CHEB_LAMBDA_MAX)  # 5/4
_CHEB_RHO = (CHEB_LAMBDA_MAX - CHEB_LAMBDA_MIN) / (CHEB_LAMBDA_MAX + CHEB_LAMBDA_MIN)  # 4/5


@dataclass(frozen=True)
class ChebyshevConfig:
    """Step count for the mass-matrix semi-iteration."""

    its: int = 5

    def __post_init__(self):
        if self.its < 1:
            raise ValueError("need at least one Chebyshev step")


def chebyshev_mass_solve(mass: csr_matrix, b: np.ndarray, cfg: ChebyshevConfig | int = 5) -> np.ndarray:
    """Approximate mass solve by the Chebyshev semi-iteration.

    The relaxation parameters follow the classical sequence (1, then
    1/(1 - rho^2/2), then 1/(1 - omega rho^2/4) onward), which realizes the
    optimal error polynomial on the spectral interval.  Works columnwise
    when ``b`` is two-dimensional; for a fixed step count the map is linear
    in ``b``.
    """
    its = cfg.its if isinstance(cfg, ChebyshevConfig) else int(cfg)
    diag = mass.diagonal()
    if np.any(diag == 0.0):
        raise ValueError("mass matrix has a zero diagonal entry")
    b = np.asarray(b, dtype=np.float64)
    scale = 1.0 / (_CHEB_ALPHA * diag)
    if b.ndim == 2:
        scale = scale[:, None]
    x_prev = np.zeros_like(b)
    x = np.zeros_like(b)
    omega = 1.0
    for k in range(its):
        if k == 1:
            omega = 1.0 / (1.0 - _CHEB_RHO**2 / 2.0)
        elif k > 1:
            omega = 1.0 / (1.0 - omega * _CHEB_RHO**2 / 4.0)
        resid = b - mass @ x
        x_new = omega * (scale * resid + x - x_prev) + x_prev
        x_prev, x = x, x_new
    return x


def make_mass_solver(mass: csr_matrix, kind: str) -> Callable[[np.ndarray], np.ndarray]:
    """Mass-block solver: 'cheb5', 'cheb10', or 'direct'."""
    if kind == "direct":
        factor = sparse_lu(mass)
        return factor.solve
    if kind.startswith("cheb"):
        its = int(kind[4:])
        cfg = ChebyshevConfig(its=its)
        return lambda b: chebyshev_mass_solve(mass, b, cfg)
    raise ValueError(f"unknown mass solver {kind!r}")


@dataclass(frozen=True)
class HierarchicalGaussSeidel:
    """Symmetric block Gauss-Seidel sweep over polynomial-degree levels.

    Each level is solved with the factored lead operator; the right-hand
    sides are corrected with the cross-level products of the leading
    ``n_tau`` Kronecker terms.  With ``n_tau = 1`` the sweep degenerates to
    independent lead solves per column (the mean-based preconditioner).
    """

    operator: KroneckerSumOperator
    partition: LevelPartition
    n_tau: int
    lead_factor: LUFactors

    def __post_init__(self):
        if not 1 <= self.n_tau <= self.operator.n_terms:
            raise ValueError("n_tau out of range")

    def _cross_product(self, v: np.ndarray, src: tuple[int, int], dst: tuple[int, int]) -> np.ndarray:
        """Truncated coupling of columns src into the rhs of columns dst."""
        slo, shi = src
        dlo, dhi = dst
        acc = np.zeros((v.shape[0], dhi - dlo))
        if slo == shi:
            return acc
        # The first coupling matrix is the identity: no cross-level entries.
        for t in range(1, self.n_tau):
            h_slice = self.operator.couplings[t][slo:shi, dlo:dhi]
            if h_slice.nnz:
                acc += right_multiply(self.operator.operators[t] @ v[:, slo:shi], h_slice)
        return acc

    def apply(self, r: np.ndarray) -> np.ndarray:
        n_h, n_xi = self.operator.shape
        if r.shape != (n_h, n_xi):
            raise ValueError(f"residual shape {r.shape} does not match {self.operator.shape}")
        ranges = self.partition.ranges()
        v = np.zeros_like(r)
        # Forward pass: later levels are still zero, so only the coupling to
        # earlier levels contributes.
        for lo, hi in ranges:
            rhs = r[:, lo:hi] - self._cross_product(v, (0, lo), (lo, hi))
            v[:, lo:hi] = self.lead_factor.solve(rhs)
        # Backward pass, skipping the top level which was just solved.
        for lo, hi in reversed(ranges[:-1]):
            rhs = (
                r[:, lo:hi]
                - self._cross_product(v, (0, lo), (lo, hi))
                - self._cross_product(v, (hi, n_xi), (lo, hi))
            )
            v[:, lo:hi] = self.lead_factor.solve(rhs)
        return v


def hgs_apply(sweep: HierarchicalGaussSeidel, r: np.ndarray) -> np.ndarray:
    return sweep.apply(r)


def richardson_hgs(
    op: KroneckerSumOperator,
    sweep: HierarchicalGaussSeidel,
    b: np.ndarray,
    n_steps: int = 1,
) -> np.ndarray:
    """Richardson iteration from zero, preconditioned by the sweep."""
    if n_steps < 1:
        raise ValueError("need at least one Richardson step")
    x = sweep.apply(b)
    for _ in range(n_steps - 1):
        x = x + sweep.apply(b - kron_apply(op, x))
    return x


def shifted_lead_terms(sys: SteadyKKT) -> list[csr_matrix]:
    """Kronecker terms of the shifted stiffness sum used by the Schur solves.

    The lead term is A_1 + sqrt((1 + gamma) / beta) M; the others are the
    plain stiffness matrices.
    """
    shift = np.sqrt((1.0 + sys.gamma) / sys.beta)
    lead = (sys.stiffness[0] + shift * sys.mass).tocsr()
    return [lead] + [a.tocsr() for a in sys.stiffness[1:]]


def time_lead_terms(sys: TimeKKT) -> list[csr_matrix]:
    """Per-step Kronecker terms after dropping the time-coupling term.

    The lead term is (1 + tau * sqrt((1 + gamma) / beta)) M + tau A_1; the
    others are tau A_l.
    """
    st = sys.steady
    tau = sys.tau
    shift = 1.0 + tau * np.sqrt((1.0 + st.gamma) / st.beta)
    lead = (shift * st.mass + tau * st.stiffness[0]).tocsr()
    return [lead] + [(tau * a).tocsr() for a in st.stiffness[1:]]


def _build_sweep(
    couplings: list[csr_matrix],
    terms: list[csr_matrix],
    partition: LevelPartition,
    n_tau: int,
) -> tuple[KroneckerSumOperator, HierarchicalGaussSeidel]:
    op = KroneckerSumOperator(couplings=couplings, operators=terms)
    sweep = HierarchicalGaussSeidel(
        operator=op,
        partition=partition,
        n_tau=n_tau,
        lead_factor=sparse_lu(terms[0]),
    )
    return op, sweep


@dataclass(frozen=True)
class SteadyKKTPreconditioner:
    """Block-diagonal preconditioner for the steady KKT system.

    The two mass blocks are inverted by the configured mass solver with the
    diagonal stochastic weights divided out; the adjoint block applies the
    approximate Schur inverse Z^-1 (weighted mass) Z^-1 with every Z solve
    replaced by the Richardson-wrapped hierarchical sweep.
    """

    system: SteadyKKT
    mass_solve: Callable[[np.ndarray], np.ndarray]
    z_operator: KroneckerSumOperator
    sweep: HierarchicalGaussSeidel
    richardson_steps: int = 1

    def schur_apply(self, r_lam: np.ndarray) -> np.ndarray:
        z1 = richardson_hgs(self.z_operator, self.sweep, r_lam, self.richardson_steps)
        w = (self.system.mass @ z1) * self.system.triple.weight_diagonal[None, :]
        return richardson_hgs(self.z_operator, self.sweep, w, self.richardson_steps)

    def apply(
        self, r_y: np.ndarray, r_u: np.ndarray, r_lam: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        weights = self.system.triple.weight_diagonal[None, :]
        v_y = self.mass_solve(r_y) / weights
        v_u = self.mass_solve(r_u) / self.system.beta
        v_lam = self.schur_apply(r_lam)
        return v_y, v_u, v_lam


def build_steady_preconditioner(
    sys: SteadyKKT,
    partition: LevelPartition,
    mass_solver: str = "cheb5",
    n_tau: int | None = None,
    richardson_steps: int = 1,
) -> SteadyKKTPreconditioner:
    n_tau = sys.n_terms if n_tau is None else n_tau
    z_op, sweep = _build_sweep(
        sys.triple.matrices[: sys.n_terms], shifted_lead_terms(sys), partition, n_tau
    )
    return SteadyKKTPreconditioner(
        system=sys,
        mass_solve=make_mass_solver(sys.mass, mass_solver),
        z_operator=z_op,
        sweep=sweep,
        richardson_steps=richardson_steps,
    )


@dataclass(frozen=True)
class TimeKKTPreconditioner:
    """Parallel-in-time block-diagonal preconditioner.

    Every block decouples across time steps, so each step is handled
    independently: mass blocks scaled by the step quadrature weight, and the
    per-step Schur approximation tau * Z^-1 (weight * weighted mass) Z^-1
    built from the time-shifted lead terms.
    """

    system: TimeKKT
    mass_solve: Callable[[np.ndarray], np.ndarray]
    z_operator: KroneckerSumOperator
    sweep: HierarchicalGaussSeidel
    richardson_steps: int = 1

    def apply(self, r: np.ndarray, step_order: Sequence[int] | None = None) -> np.ndarray:
        sys = self.system
        st = sys.steady
        tau = sys.tau
        wsteps = sys.stencil.weights
        wcols = st.triple.weight_diagonal[None, :]
        r_y, r_u, r_lam = split_time_blocks(sys, r)
        v_y = np.empty_like(r_y)
        v_u = np.empty_like(r_u)
        v_lam = np.empty_like(r_lam)
        order = range(sys.n_t) if step_order is None else step_order
        for k in order:
            dk = wsteps[k]
            v_y[k] = self.mass_solve(r_y[k]) / (tau * dk * wcols)
            v_u[k] = self.mass_solve(r_u[k]) / (st.beta * tau * dk)
            z1 = richardson_hgs(self.z_operator, self.sweep, r_lam[k], self.richardson_steps)
            w = dk * (st.mass @ z1) * wcols
            v_lam[k] = tau * richardson_hgs(self.z_operator, self.sweep, w, self.richardson_steps)
        return join_time_blocks(v_y, v_u, v_lam)


def build_time_preconditioner(
    sys: TimeKKT,
    partition: LevelPartition,
    mass_solver: str = "cheb5",
    n_tau: int | None = None,
    richardson_steps: int = 1,
) -> TimeKKTPreconditioner:
    st = sys.steady
    n_tau = st.n_terms if n_tau is None else n_tau
    z_op, sweep = _build_sweep(
        st.triple.matrices[: st.n_terms], time_lead_terms(sys), partition, n_tau
    )
    return TimeKKTPreconditioner(
        system=sys,
        mass_solve=make_mass_solver(st.mass, mass_solver),
        z_operator=z_op,
        sweep=sweep,
        richardson_steps=richardson_steps,
    )


@dataclass(frozen=True)
class CoupledSweepPreconditioner:
    """Hierarchical sweep over the coupled KKT system.

    At every degree level one multi-right-hand-side solve with the
    deterministic KKT matrix

        [ M     0         -A_1 ]
        [ 0     beta M     M   ]
        [ -A_1  M          0   ]

    is performed; the level right-hand sides are corrected by the truncated
    cross-level products of the stiffness terms.  The mass couplings vanish
    identically because the corresponding coupling matrices are diagonal,
    but the slices are consulted anyway so the sweep stays faithful to its
    definition for any coupling structure.
    """

    system: SteadyKKT
    partition: LevelPartition
    n_tau: int
    kkt_factor: LUFactors

    def _stiffness_coupling(
        self, v: np.ndarray, src: tuple[int, int], dst: tuple[int, int]
    ) -> np.ndarray:
        slo, shi = src
        dlo, dhi = dst
        acc = np.zeros((v.shape[0], dhi - dlo))
        if slo == shi:
            return acc
        for t in range(self.n_tau):
            h_slice = self.system.triple.matrices[t][slo:shi, dlo:dhi]
            if h_slice.nnz:
                acc += right_multiply(self.system.stiffness[t] @ v[:, slo:shi], h_slice)
        return acc

    def _mass_coupling(
        self, v: np.ndarray, src: tuple[int, int], dst: tuple[int, int], coupling: csr_matrix
    ) -> np.ndarray:
        slo, shi = src
        dlo, dhi = dst
        acc = np.zeros((v.shape[0], dhi - dlo))
        if slo == shi:
            return acc
        h_slice = coupling[slo:shi, dlo:dhi]
        if h_slice.nnz:
            acc += right_multiply(self.system.mass @ v[:, slo:shi], h_slice)
        return acc

    def _level_rhs(
        self,
        blocks: tuple[np.ndarray, np.ndarray, np.ndarray],
        state: tuple[np.ndarray, np.ndarray, np.ndarray],
        src_ranges: list[tuple[int, int]],
        dst: tuple[int, int],
    ) -> np.ndarray:
        r_y, r_u, r_lam = blocks
        v_y, v_u, v_lam = state
        sys = self.system
        dlo, dhi = dst
        rhs_y = r_y[:, dlo:dhi].copy()
        rhs_u = r_u[:, dlo:dhi].copy()
        rhs_lam = r_lam[:, dlo:dhi].copy()
        weight = sys.triple.objective_weight
        identity = sys.triple.matrices[0]
        for src in src_ranges:
            rhs_y -= self._mass_coupling(v_y, src, dst, weight)
            rhs_y += self._stiffness_coupling(v_lam, src, dst)
            rhs_u -= sys.beta * self._mass_coupling(v_u, src, dst, identity)
            rhs_u -= self._mass_coupling(v_lam, src, dst, identity)
            rhs_lam += self._stiffness_coupling(v_y, src, dst)
            rhs_lam -= self._mass_coupling(v_u, src, dst, identity)
        return np.vstack([rhs_y, rhs_u, rhs_lam])

    def apply(
        self, r_y: np.ndarray, r_u: np.ndarray, r_lam: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        sys = self.system
        n_h, n_xi = sys.n_h, sys.n_xi
        v_y = np.zeros((n_h, n_xi))
        v_u = np.zeros((n_h, n_xi))
        v_lam = np.zeros((n_h, n_xi))
        blocks = (r_y, r_u, r_lam)
        state = (v_y, v_u, v_lam)
        ranges = self.partition.ranges()
        for lo, hi in ranges:
            rhs = self._level_rhs(blocks, state, [(0, lo)], (lo, hi))
            sol = self.kkt_factor.solve(rhs)
            v_y[:, lo:hi] = sol[:n_h]
            v_u[:, lo:hi] = sol[n_h : 2 * n_h]
            v_lam[:, lo:hi] = sol[2 * n_h :]
        for lo, hi in reversed(ranges[:-1]):
            rhs = self._level_rhs(blocks, state, [(0, lo), (hi, n_xi)], (lo, hi))
            sol = self.kkt_factor.solve(rhs)
            v_y[:, lo:hi] = sol[:n_h]
            v_u[:, lo:hi] = sol[n_h : 2 * n_h]
            v_lam[:, lo:hi] = sol[2 * n_h :]
        return v_y, v_u, v_lam


def deterministic_kkt_matrix(sys: SteadyKKT) -> csr_matrix:
    """The lead-term KKT matrix the coupled sweep solves at each level."""
    m = sys.mass
    a1 = sys.stiffness[0]
    return scipy.sparse.bmat(
        [
            [m, None, -a1],
            [None, sys.beta * m, m],
            [-a1, m, None],
        ],
        format="csr",
    )


def build_coupled_preconditioner(
    sys: SteadyKKT, partition: LevelPartition, n_tau: int | None = None
) -> CoupledSweepPreconditioner:
    n_tau = sys.n_terms if n_tau is None else n_tau
    if not 1 <= n_tau <= sys.n_terms:
        raise ValueError("n_tau out of range")
    return CoupledSweepPreconditioner(
        system=sys,
        partition=partition,
        n_tau=n_tau,
        kkt_factor=sparse_lu(deterministic_kkt_matrix(sys)),
    )
