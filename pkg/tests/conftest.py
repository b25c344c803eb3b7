"""Shared builders for small test instances."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest
from scipy.sparse import csr_matrix

sys.path.insert(0, str(Path(__file__).parent))

from sgkkt.basis import build_triple_products, enumerate_multi_indices, level_partition
from sgkkt.operators import SteadyKKT, TimeKKT, build_time_stencil


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def random_spd(rng, n: int, shift: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((n, n))
    return a @ a.T + shift * np.eye(n)


def random_steady_system(
    rng,
    n_h: int = 5,
    m_xi: int = 2,
    p: int = 2,
    n_terms: int | None = None,
    beta: float = 1e-2,
    gamma: float = 1.0,
    coeff_scale: float = 0.2,
) -> tuple[SteadyKKT, object]:
    """Small synthetic system with a random SPD mass and perturbed stiffness.

    Returns the system together with its level partition.  The perturbation
    scale keeps the coupled stiffness sum positive definite.
    """
    basis = enumerate_multi_indices(m_xi, p)
    deg = 2
    if n_terms is not None:
        deg = 1
        while enumerate_multi_indices(m_xi, deg).size < n_terms:
            deg += 1
    coeff = enumerate_multi_indices(m_xi, deg)
    if n_terms is None:
        n_terms = coeff.size
    triple = build_triple_products(basis, coeff, gamma)
    mass = csr_matrix(random_spd(rng, n_h, shift=float(n_h)))
    lead = random_spd(rng, n_h, shift=float(n_h))
    stiffness = [csr_matrix(lead)]
    for _ in range(1, n_terms):
        sym = rng.standard_normal((n_h, n_h))
        sym = coeff_scale * (sym + sym.T) / 2.0
        stiffness.append(csr_matrix(sym))
    target = rng.standard_normal((n_h, basis.size))
    sys_ = SteadyKKT(
        mass=mass,
        stiffness=stiffness,
        triple=triple,
        beta=beta,
        gamma=gamma,
        target=target,
    )
    return sys_, level_partition(basis)


def random_time_system(rng, n_t: int = 3, **kwargs) -> tuple[TimeKKT, object]:
    steady, partition = random_steady_system(rng, **kwargs)
    stencil = build_time_stencil(n_t)
    y0 = rng.standard_normal((steady.n_h, steady.n_xi))
    return TimeKKT(steady=steady, stencil=stencil, initial_state=y0), partition
