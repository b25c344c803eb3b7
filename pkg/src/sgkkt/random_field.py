"""Karhunen-Loeve expansion of the separable exponential covariance.

The expansion is computed with a discrete Nystrom method on the element
Gauss points: the covariance kernel is sampled there, every point carries
the uniform quadrature weight (h/2)^2, and the symmetric weighted
eigenproblem is solved densely.  The same machinery feeds both the affine
coefficient (the field itself is expanded) and the lognormal coefficient
(the Gaussian exponent is expanded and the exponential is projected on the
Hermite basis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .basis import MultiIndexSet
from .fem import CoefficientField, Grid

__all__ = [
    "CovarianceSpec",
    "GpcCoefficientField",
    "KLModes",
    "affine_coefficient",
    "kl_expand",
    "lognormal_coefficient",
]


@dataclass(frozen=True)
class CovarianceSpec:
    """Separable exponential covariance sigma^2 exp(-|dx|/ell1 - |dy|/ell2)."""

    sigma_k: float
    ell1: float = 1.0
    ell2: float = 1.0
    mean: float = 1.0

    def __post_init__(self):
        if self.sigma_k < 0:
            raise ValueError("sigma_k must be nonnegative")
        if self.ell1 <= 0 or self.ell2 <= 0:
            raise ValueError("correlation lengths must be positive")

    def kernel(self, x1, y1, x2, y2) -> np.ndarray:
        return self.sigma_k**2 * np.exp(
            -np.abs(x1 - x2) / self.ell1 - np.abs(y1 - y2) / self.ell2
        )


@dataclass(frozen=True)
class KLModes:
    """Truncated expansion: eigenvalues and scaled mode fields.

    ``mode_fields[i]`` stores sqrt(theta_i) * kappa_i at the quadrature
    points, so a field realization is mean + sum_i mode_i * xi_i.
    """

    eigenvalues: np.ndarray  # nonincreasing, nonnegative
    mode_fields: list[CoefficientField]
    mean_field: CoefficientField

    @property
    def m_xi(self) -> int:
        return len(self.mode_fields)


def kl_expand(spec: CovarianceSpec, grid: Grid, m_xi: int) -> KLModes:
    """Top m_xi eigenpairs of the covariance operator on the grid's Gauss points."""
    xs = grid.gauss_x.ravel()
    ys = grid.gauss_y.ravel()
    npts = xs.size
    if not 1 <= m_xi <= npts:
        raise ValueError(f"m_xi must be in [1, {npts}]")
    weight = grid.quad_weight

    mean_field = CoefficientField(values=np.full(grid.gauss_x.shape, spec.mean))
    if spec.sigma_k == 0.0:
        zeros = [
            CoefficientField(values=np.zeros(grid.gauss_x.shape)) for _ in range(m_xi)
        ]
        return KLModes(
            eigenvalues=np.zeros(m_xi), mode_fields=zeros, mean_field=mean_field
        )

    cov = spec.kernel(xs[:, None], ys[:, None], xs[None, :], ys[None, :])
    # Uniform weights make the weighted eigenproblem symmetric outright.
    sym = weight * cov
    vals, vecs = scipy.linalg.eigh(sym, subset_by_index=[npts - m_xi, npts - 1])
    order = np.argsort(vals)[::-1]
    vals = np.maximum(vals[order], 0.0)
    vecs = vecs[:, order]

    mode_fields = []
    tol = 1e-12
    for i in range(m_xi):
        kappa = vecs[:, i] / math.sqrt(weight)
        nz = np.flatnonzero(np.abs(kappa) > tol * max(np.abs(kappa).max(), 1.0))
        if nz.size and kappa[nz[0]] < 0:
            kappa = -kappa
        scaled = math.sqrt(vals[i]) * kappa
        mode_fields.append(CoefficientField(values=scaled.reshape(grid.gauss_x.shape)))
    return KLModes(eigenvalues=vals, mode_fields=mode_fields, mean_field=mean_field)


@dataclass(frozen=True)
class GpcCoefficientField:
    """Expansion coefficients of the diffusion field, one per coefficient index."""

    coeff_fields: list[CoefficientField]

    @property
    def n_terms(self) -> int:
        return len(self.coeff_fields)


def affine_coefficient(modes: KLModes) -> GpcCoefficientField:
    """Coefficient fields of the field itself: mean then the scaled modes.

    Matches the coefficient index set of total degree 1, ordered as the
    constant followed by the first-order indices.
    """
    fields = [modes.mean_field] + list(modes.mode_fields)
    return GpcCoefficientField(coeff_fields=fields)


def lognormal_coefficient(modes: KLModes, coeff_basis: MultiIndexSet) -> GpcCoefficientField:
    """Hermite expansion of exp(g) for a Gaussian exponent g with the given modes.

    The exponent mean is pinned pointwise so that the expectation of the
    lognormal field equals ``modes.mean_field``; with that normalization the
    coefficient of the index k reduces to mean(x) * prod_i g_i(x)^{k_i} /
    sqrt(k_i!).
    """
    if coeff_basis.m_xi != modes.m_xi:
        raise ValueError("coefficient basis and modes use different variable counts")
    mean_vals = modes.mean_field.values
    if np.any(mean_vals <= 0):
        raise ValueError("lognormal mean field must be strictly positive")
    gvals = [f.values for f in modes.mode_fields]
    fields = []
    for idx in coeff_basis.indices:
        coeff = mean_vals.copy()
        for i, k in enumerate(idx):
            if k:
                coeff = coeff * gvals[i] ** k / math.sqrt(math.factorial(k))
        fields.append(CoefficientField(values=coeff))
    return GpcCoefficientField(coeff_fields=fields)
