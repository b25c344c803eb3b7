"""End-to-end assembly of benchmark problems from scalar parameters.

Ties the grid, the Karhunen-Loeve expansion, the chaos basis and the
triple-product tensors together into ready-to-solve KKT systems.  The
benchmark target state is the discontinuous indicator of the lower-left
quadrant [-1, 0]^2, interpolated at the nodes with the closed-subdomain
convention (interface nodes belong to the quadrant).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fem
from .basis import (
    LevelPartition,
    MultiIndexSet,
    TripleProductSet,
    build_triple_products,
    enumerate_multi_indices,
    level_partition,
)
from .operators import SteadyKKT, TimeKKT, build_time_stencil
from .random_field import (
    CovarianceSpec,
    GpcCoefficientField,
    KLModes,
    affine_coefficient,
    kl_expand,
    lognormal_coefficient,
)

__all__ = [
    "ProblemBundle",
    "build_steady_problem",
    "build_time_problem",
    "target_state",
]


def target_state(grid: fem.Grid) -> np.ndarray:
    """Interior nodal values of the quadrant indicator target."""
    return fem.interpolate_nodal(
        grid, lambda x, y: ((x <= 0.0) & (y <= 0.0)).astype(float)
    )


@dataclass(frozen=True)
class ProblemBundle:
    """Everything a solver or analysis pass needs for one configuration."""

    grid: fem.Grid
    basis: MultiIndexSet
    partition: LevelPartition
    triple: TripleProductSet
    modes: KLModes
    coefficient: GpcCoefficientField
    system: SteadyKKT | TimeKKT

    @property
    def steady_system(self) -> SteadyKKT:
        sys = self.system
        return sys.steady if isinstance(sys, TimeKKT) else sys


def _build_coefficient(
    grid: fem.Grid,
    m_xi: int,
    sigma_k: float,
    coefficient: str,
    coefficient_degree: int,
    ell1: float,
    ell2: float,
    mean: float,
) -> tuple[KLModes, GpcCoefficientField, MultiIndexSet]:
    spec = CovarianceSpec(sigma_k=sigma_k, ell1=ell1, ell2=ell2, mean=mean)
    modes = kl_expand(spec, grid, m_xi)
    if coefficient == "affine":
        coeff_indices = enumerate_multi_indices(m_xi, 1)
        gpc = affine_coefficient(modes)
    elif coefficient == "lognormal":
        coeff_indices = enumerate_multi_indices(m_xi, coefficient_degree)
        gpc = lognormal_coefficient(modes, coeff_indices)
    else:
        raise ValueError(f"unknown coefficient kind {coefficient!r}")
    return modes, gpc, coeff_indices


def build_steady_problem(
    n: int,
    m_xi: int,
    p: int,
    sigma_k: float,
    beta: float,
    gamma: float = 1.0,
    coefficient: str = "lognormal",
    coefficient_degree: int | None = None,
    ell1: float = 1.0,
    ell2: float = 1.0,
    mean: float = 1.0,
) -> ProblemBundle:
    if coefficient_degree is None:
        coefficient_degree = 2 * p
    grid = fem.build_grid(n)
    basis = enumerate_multi_indices(m_xi, p)
    partition = level_partition(basis)
    modes, gpc, coeff_indices = _build_coefficient(
        grid, m_xi, sigma_k, coefficient, coefficient_degree, ell1, ell2, mean
    )
    triple = build_triple_products(basis, coeff_indices, gamma)
    mass = fem.assemble_mass(grid)
    stiffness = [fem.assemble_stiffness(grid, f) for f in gpc.coeff_fields]
    target = np.zeros((grid.n_interior, basis.size))
    target[:, 0] = target_state(grid)
    system = SteadyKKT(
        mass=mass,
        stiffness=stiffness,
        triple=triple,
        beta=beta,
        gamma=gamma,
        target=target,
    )
    return ProblemBundle(
        grid=grid,
        basis=basis,
        partition=partition,
        triple=triple,
        modes=modes,
        coefficient=gpc,
        system=system,
    )


def build_time_problem(
    n: int,
    m_xi: int,
    p: int,
    sigma_k: float,
    beta: float,
    n_t: int,
    gamma: float = 1.0,
    coefficient: str = "lognormal",
    coefficient_degree: int | None = None,
    ell1: float = 1.0,
    ell2: float = 1.0,
    mean: float = 1.0,
) -> ProblemBundle:
    steady_bundle = build_steady_problem(
        n=n,
        m_xi=m_xi,
        p=p,
        sigma_k=sigma_k,
        beta=beta,
        gamma=gamma,
        coefficient=coefficient,
        coefficient_degree=coefficient_degree,
        ell1=ell1,
        ell2=ell2,
        mean=mean,
    )
    stencil = build_time_stencil(n_t)
    steady = steady_bundle.system
    system = TimeKKT(
        steady=steady,
        stencil=stencil,
        initial_state=np.zeros((steady.n_h, steady.n_xi)),
    )
    return ProblemBundle(
        grid=steady_bundle.grid,
        basis=steady_bundle.basis,
        partition=steady_bundle.partition,
        triple=steady_bundle.triple,
        modes=steady_bundle.modes,
        coefficient=steady_bundle.coefficient,
        system=system,
    )
