import numpy as np
import pytest
from scipy.sparse import csr_matrix

from conftest import random_steady_system, random_time_system
from oracles import (
    dense_coupled_sweep_matrix,
    dense_entrywise_split_matrix,
    dense_kron_sum,
    dense_richardson_inverse,
    dense_steady_precond_matrix,
    dense_sweep_matrix,
    dense_time_precond_matrix,
    coupled_permutation,
)
from sgkkt.fem import assemble_mass, build_grid
from sgkkt.operators import kron_apply, matricize, vectorize
from sgkkt.preconditioners import (
    ChebyshevConfig,
    build_coupled_preconditioner,
    build_steady_preconditioner,
    build_time_preconditioner,
    chebyshev_mass_solve,
    richardson_hgs,
    shifted_lead_terms,
)


# ---------------------------------------------------------------------------
# Chebyshev semi-iteration


def test_chebyshev_zero_rhs():
    grid = build_grid(4)
    mass = assemble_mass(grid)
    out = chebyshev_mass_solve(mass, np.zeros(mass.shape[0]))
    assert np.all(out == 0.0)


def test_chebyshev_bound_on_synthetic_spectrum(rng):
    # unit diagonal, eigenvalues inside [1/4, 9/4]: the five-step min-max
    # bound 2 q^5 / (1 + q^10) with q = 1/2 evaluates to 0.0624...
    n = 40
    off = 0.375 * (np.diag(np.ones(n - 1), 1) + np.diag(np.ones(n - 1), -1))
    mat = np.eye(n) + off
    vals = np.linalg.eigvalsh(mat)
    assert vals.min() >= 0.25 and vals.max() <= 2.25
    sp = csr_matrix(mat)
    worst = 0.0
    for _ in range(10):
        b = rng.standard_normal(n)
        x = chebyshev_mass_solve(sp, b, ChebyshevConfig(its=5))
        exact = np.linalg.solve(mat, b)
        worst = max(worst, np.linalg.norm(x - exact) / np.linalg.norm(exact))
    assert worst <= 2 * 0.5**5 / (1 + 0.5**10)


def test_chebyshev_q1_mass_bound(rng):
    grid = build_grid(8)
    mass = assemble_mass(grid)
    dense = mass.toarray()
    for _ in range(20):
        b = rng.standard_normal(mass.shape[0])
        x = chebyshev_mass_solve(mass, b, ChebyshevConfig(its=5))
        exact = np.linalg.solve(dense, b)
        assert np.linalg.norm(x - exact) <= 0.07 * np.linalg.norm(exact)


def test_chebyshev_columnwise_matches_per_column(rng):
    grid = build_grid(4)
    mass = assemble_mass(grid)
    block = rng.standard_normal((mass.shape[0], 3))
    stacked = chebyshev_mass_solve(mass, block, 5)
    for j in range(3):
        single = chebyshev_mass_solve(mass, block[:, j], 5)
        assert np.array_equal(stacked[:, j], single)


def test_chebyshev_rejects_zero_diagonal():
    mat = csr_matrix(np.diag([1.0, 0.0, 2.0]))
    with pytest.raises(ValueError):
        chebyshev_mass_solve(mat, np.ones(3))


def test_chebyshev_is_linear(rng):
    grid = build_grid(4)
    mass = assemble_mass(grid)
    b1 = rng.standard_normal(mass.shape[0])
    b2 = rng.standard_normal(mass.shape[0])
    lhs = chebyshev_mass_solve(mass, 2.0 * b1 - 3.0 * b2, 5)
    rhs = 2.0 * chebyshev_mass_solve(mass, b1, 5) - 3.0 * chebyshev_mass_solve(mass, b2, 5)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


# ---------------------------------------------------------------------------
# Hierarchical sweep


def _steady_sweep(rng, n_tau=None, **kwargs):
    sys, partition = random_steady_system(rng, **kwargs)
    prec = build_steady_preconditioner(sys, partition, mass_solver="direct", n_tau=n_tau)
    return sys, partition, prec


def test_sweep_mean_based_is_columnwise_lead_solve(rng):
    sys, partition, prec = _steady_sweep(rng, n_tau=1)
    r = rng.standard_normal((sys.n_h, sys.n_xi))
    out = prec.sweep.apply(r)
    lead = shifted_lead_terms(sys)[0].toarray()
    expected = np.linalg.solve(lead, r)
    assert np.abs(out - expected).max() <= 1e-12


def test_sweep_linearity(rng):
    sys, partition, prec = _steady_sweep(rng)
    r1 = rng.standard_normal((sys.n_h, sys.n_xi))
    r2 = rng.standard_normal((sys.n_h, sys.n_xi))
    lhs = prec.sweep.apply(0.5 * r1 + 2.0 * r2)
    rhs = 0.5 * prec.sweep.apply(r1) + 2.0 * prec.sweep.apply(r2)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


@pytest.mark.parametrize("n_tau", [2, None])
def test_sweep_matches_dense_splitting(rng, n_tau):
    sys, partition, prec = _steady_sweep(rng, n_tau=n_tau, n_h=4, m_xi=2, p=2)
    terms = shifted_lead_terms(sys)
    split = dense_sweep_matrix(
        sys.triple.matrices[: sys.n_terms], terms, partition, prec.sweep.n_tau
    )
    r = rng.standard_normal((sys.n_h, sys.n_xi))
    expected = matricize(np.linalg.solve(split, vectorize(r)), sys.n_h, sys.n_xi)
    assert np.abs(prec.sweep.apply(r) - expected).max() <= 1e-10


def test_sweep_full_truncation_matches_entrywise_split_on_affine(rng):
    # first-order coefficient indices: the couplings have no within-level
    # entries, so the level sweep equals the entrywise splitting operator
    sys, partition, prec = _steady_sweep(rng, n_h=5, m_xi=3, p=2, n_terms=4)
    terms = shifted_lead_terms(sys)
    split = dense_entrywise_split_matrix(
        sys.triple.matrices[: sys.n_terms], terms, sys.n_terms
    )
    r = rng.standard_normal((sys.n_h, sys.n_xi))
    expected = matricize(np.linalg.solve(split, vectorize(r)), sys.n_h, sys.n_xi)
    assert np.abs(prec.sweep.apply(r) - expected).max() <= 1e-10


def test_richardson_one_step_is_one_sweep(rng):
    sys, partition, prec = _steady_sweep(rng)
    b = rng.standard_normal((sys.n_h, sys.n_xi))
    assert np.array_equal(
        richardson_hgs(prec.z_operator, prec.sweep, b, 1), prec.sweep.apply(b)
    )


def test_richardson_residual_nonincreasing(rng):
    sys, partition, prec = _steady_sweep(rng, n_h=4, m_xi=2, p=2)
    b = rng.standard_normal((sys.n_h, sys.n_xi))
    norms = []
    for n_steps in range(1, 6):
        x = richardson_hgs(prec.z_operator, prec.sweep, b, n_steps)
        norms.append(np.linalg.norm(b - kron_apply(prec.z_operator, x)))
    assert all(b <= a * (1 + 1e-12) for a, b in zip(norms, norms[1:]))


class _ExactSolve:
    """Stand-in sweep with an exact dense solve."""

    def __init__(self, z_dense, n_h, n_xi):
        self.z = z_dense
        self.shape = (n_h, n_xi)

    def apply(self, r):
        return matricize(np.linalg.solve(self.z, vectorize(r)), *self.shape)


def test_richardson_exact_inner_solve_converges_in_one_step(rng):
    sys, partition, prec = _steady_sweep(rng, n_h=4, m_xi=2, p=1)
    terms = shifted_lead_terms(sys)
    z_dense = dense_kron_sum(sys.triple.matrices[: sys.n_terms], terms)
    exact = _ExactSolve(z_dense, sys.n_h, sys.n_xi)
    b = rng.standard_normal((sys.n_h, sys.n_xi))
    x = richardson_hgs(prec.z_operator, exact, b, 1)
    assert np.linalg.norm(b - kron_apply(prec.z_operator, x)) <= 1e-11 * np.linalg.norm(b)


# ---------------------------------------------------------------------------
# Steady block-diagonal preconditioner


def test_schur_apply_exact_solves_match_dense(rng):
    sys, partition, prec = _steady_sweep(rng, n_h=4, m_xi=2, p=1)
    terms = shifted_lead_terms(sys)
    z_dense = dense_kron_sum(sys.triple.matrices[: sys.n_terms], terms)
    exact_prec = type(prec)(
        system=sys,
        mass_solve=prec.mass_solve,
        z_operator=prec.z_operator,
        sweep=_ExactSolve(z_dense, sys.n_h, sys.n_xi),
        richardson_steps=1,
    )
    mass = sys.mass.toarray()
    m_gamma = np.kron(np.diag(sys.triple.weight_diagonal), mass)
    z_inv = np.linalg.inv(z_dense)
    s_inv = z_inv @ m_gamma @ z_inv
    r = rng.standard_normal((sys.n_h, sys.n_xi))
    out = exact_prec.schur_apply(r)
    expected = matricize(s_inv @ vectorize(r), sys.n_h, sys.n_xi)
    assert np.abs(out - expected).max() <= 1e-10 * max(1.0, np.abs(expected).max())


def test_schur_apply_single_mode_reduces_to_deterministic(rng):
    # one stochastic mode and gamma = 0: lead^-1 M lead^-1
    sys, partition = random_steady_system(rng, n_h=5, m_xi=1, p=0, gamma=0.0, n_terms=1)
    prec = build_steady_preconditioner(sys, partition, mass_solver="direct")
    r = rng.standard_normal((sys.n_h, 1))
    lead = shifted_lead_terms(sys)[0].toarray()
    expected = np.linalg.solve(lead, sys.mass @ np.linalg.solve(lead, r))
    assert np.abs(prec.schur_apply(r) - expected).max() <= 1e-11


def test_schur_apply_linearity(rng):
    sys, partition, prec = _steady_sweep(rng)
    r1 = rng.standard_normal((sys.n_h, sys.n_xi))
    r2 = rng.standard_normal((sys.n_h, sys.n_xi))
    lhs = prec.schur_apply(r1 + 0.5 * r2)
    rhs = prec.schur_apply(r1) + 0.5 * prec.schur_apply(r2)
    assert np.abs(lhs - rhs).max() <= 1e-12 * max(1.0, np.abs(rhs).max())


def test_steady_precond_matches_dense_blockdiag(rng):
    sys, partition, prec = _steady_sweep(rng, n_h=4, m_xi=2, p=2)
    dense = dense_steady_precond_matrix(sys, partition, prec.sweep.n_tau, 1)
    size = sys.block_size()
    v = rng.standard_normal(3 * size)
    out = prec.apply(
        matricize(v[:size], sys.n_h, sys.n_xi),
        matricize(v[size : 2 * size], sys.n_h, sys.n_xi),
        matricize(v[2 * size :], sys.n_h, sys.n_xi),
    )
    packed = np.concatenate([vectorize(o) for o in out])
    assert np.abs(packed - dense @ v).max() <= 1e-10 * max(1.0, np.abs(packed).max())


def test_steady_precond_zero_input(rng):
    sys, partition, prec = _steady_sweep(rng)
    zero = np.zeros((sys.n_h, sys.n_xi))
    out = prec.apply(zero, zero, zero)
    assert all(np.all(o == 0.0) for o in out)


def test_steady_precond_column_scaling(rng):
    sys, partition = random_steady_system(rng, n_h=4, m_xi=2, p=2)
    prec = build_steady_preconditioner(sys, partition, mass_solver="cheb5")
    r = rng.standard_normal((sys.n_h, sys.n_xi))
    v_y, _, _ = prec.apply(r, np.zeros_like(r), np.zeros_like(r))
    weights = sys.triple.weight_diagonal
    for j in range(sys.n_xi):
        col = chebyshev_mass_solve(sys.mass, r[:, j], 5) / weights[j]
        assert np.abs(v_y[:, j] - col).max() <= 1e-13 * max(1.0, np.abs(col).max())


def test_steady_precond_fixed_linear_operator(rng):
    sys, partition = random_steady_system(rng)
    prec = build_steady_preconditioner(sys, partition, mass_solver="cheb5")
    shape = (sys.n_h, sys.n_xi)
    r1 = [rng.standard_normal(shape) for _ in range(3)]
    r2 = [rng.standard_normal(shape) for _ in range(3)]
    lhs = prec.apply(*(a + 2.0 * b for a, b in zip(r1, r2)))
    rhs1 = prec.apply(*r1)
    rhs2 = prec.apply(*r2)
    for left, a, b in zip(lhs, rhs1, rhs2):
        combo = a + 2.0 * b
        assert np.abs(left - combo).max() <= 1e-12 * max(1.0, np.abs(combo).max())


# ---------------------------------------------------------------------------
# Coupled sweep


def test_coupled_sweep_matches_dense_splitting(rng):
    sys, partition = random_steady_system(rng, n_h=4, m_xi=3, p=1, n_terms=4)
    prec = build_coupled_preconditioner(sys, partition)
    split = dense_coupled_sweep_matrix(sys, partition, prec.n_tau)
    perm = coupled_permutation(sys.n_h, sys.n_xi)
    size = sys.block_size()
    v = rng.standard_normal(3 * size)
    out = prec.apply(
        matricize(v[:size], sys.n_h, sys.n_xi),
        matricize(v[size : 2 * size], sys.n_h, sys.n_xi),
        matricize(v[2 * size :], sys.n_h, sys.n_xi),
    )
    packed = np.concatenate([vectorize(o) for o in out])
    expected_perm = np.linalg.solve(split, v[perm])
    expected = np.empty_like(expected_perm)
    expected[perm] = expected_perm
    assert np.abs(packed - expected).max() <= 1e-9 * max(1.0, np.abs(expected).max())


def test_coupled_sweep_single_column(rng):
    sys, partition = random_steady_system(rng, n_h=4, m_xi=1, p=0, n_terms=1)
    prec = build_coupled_preconditioner(sys, partition)
    r = [rng.standard_normal((sys.n_h, 1)) for _ in range(3)]
    out = prec.apply(*r)
    from sgkkt.preconditioners import deterministic_kkt_matrix

    kkt = deterministic_kkt_matrix(sys).toarray()
    stacked = np.linalg.solve(kkt, np.vstack(r))
    assert np.abs(np.vstack(out) - stacked).max() <= 1e-11


def test_coupled_sweep_mean_based_decouples(rng):
    sys, partition = random_steady_system(rng, n_h=4, m_xi=2, p=2)
    prec = build_coupled_preconditioner(sys, partition, n_tau=1)
    from sgkkt.preconditioners import deterministic_kkt_matrix

    kkt = deterministic_kkt_matrix(sys).toarray()
    r = [rng.standard_normal((sys.n_h, sys.n_xi)) for _ in range(3)]
    out = prec.apply(*r)
    for j in range(sys.n_xi):
        col = np.linalg.solve(kkt, np.concatenate([blk[:, j] for blk in r]))
        got = np.concatenate([blk[:, j] for blk in out])
        assert np.abs(got - col).max() <= 1e-11 * max(1.0, np.abs(col).max())


# ---------------------------------------------------------------------------
# Parallel-in-time preconditioner


def test_time_precond_matches_dense(rng):
    sys, partition = random_time_system(rng, n_t=2, n_h=4, m_xi=2, p=1)
    prec = build_time_preconditioner(sys, partition, mass_solver="direct")
    dense = dense_time_precond_matrix(sys, partition, prec.sweep.n_tau, 1)
    v = rng.standard_normal(3 * sys.block_size())
    out = prec.apply(v)
    assert np.abs(out - dense @ v).max() <= 1e-10 * max(1.0, np.abs(out).max())


def test_time_precond_step_order_invariance(rng):
    sys, partition = random_time_system(rng, n_t=4, n_h=4, m_xi=2, p=2)
    prec = build_time_preconditioner(sys, partition, mass_solver="cheb5")
    v = rng.standard_normal(3 * sys.block_size())
    base = prec.apply(v)
    shuffled = prec.apply(v, step_order=[2, 0, 3, 1])
    assert np.array_equal(base, shuffled)


def test_time_precond_single_step_matches_steady_form(rng):
    # one step, tau = 1: mass blocks gain 1/(tau d) = 2, the Schur block
    # gains tau * d = 1/2, with the lead term shifted by the extra mass
    sys, partition = random_time_system(rng, n_t=1, n_h=4, m_xi=2, p=1)
    st = sys.steady
    prec = build_time_preconditioner(sys, partition, mass_solver="direct")
    v = rng.standard_normal(3 * sys.block_size())
    out = prec.apply(v)

    size = st.block_size()
    r_y = matricize(v[:size], st.n_h, st.n_xi)
    r_u = matricize(v[size : 2 * size], st.n_h, st.n_xi)
    r_lam = matricize(v[2 * size :], st.n_h, st.n_xi)
    mass_dense = st.mass.toarray()
    weights = st.triple.weight_diagonal
    v_y = 2.0 * np.linalg.solve(mass_dense, r_y) / weights[None, :]
    v_u = 2.0 * np.linalg.solve(mass_dense, r_u) / st.beta
    z1 = richardson_hgs(prec.z_operator, prec.sweep, r_lam, 1)
    w = 0.5 * (st.mass @ z1) * weights[None, :]
    v_lam = richardson_hgs(prec.z_operator, prec.sweep, w, 1)
    expected = np.concatenate([vectorize(v_y), vectorize(v_u), vectorize(v_lam)])
    assert np.abs(out - expected).max() <= 1e-11 * max(1.0, np.abs(expected).max())
