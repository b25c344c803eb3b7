"""Q1 finite-element assembly on a uniform grid over the square [-1, 1]^2.

Bilinear elements, 2x2 Gauss quadrature, homogeneous Dirichlet boundary
handled by restriction to interior nodes.  Node numbering is lexicographic
with x running fastest, node 0 at (-1, -1); elements follow the same order.
Diffusion coefficients enter through their values at the element Gauss
points, which keeps the field representation independent of the mesh data
structures.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.sparse import csr_matrix

from .linalg import csr_from_coo

__all__ = [
    "CoefficientField",
    "Grid",
    "GAUSS_OFFSET",
    "assemble_mass",
    "assemble_stiffness",
    "build_grid",
    "constant_field",
    "interpolate_nodal",
    "sample_coefficient",
]

# 2x2 Gauss points on the reference square, x fastest.
GAUSS_OFFSET = 1.0 / np.sqrt(3.0)
_REF_POINTS = np.array(
    [
        (-GAUSS_OFFSET, -GAUSS_OFFSET),
        (+GAUSS_OFFSET, -GAUSS_OFFSET),
        (-GAUSS_OFFSET, +GAUSS_OFFSET),
        (+GAUSS_OFFSET, +GAUSS_OFFSET),
    ]
)

# Counterclockwise local node order starting at the lower-left corner.
_CORNER_SIGNS = np.array([(-1, -1), (1, -1), (1, 1), (-1, 1)], dtype=np.float64)


def _shape_values(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Bilinear shape functions at reference points, shape (npts, 4)."""
    out = np.empty((xi.size, 4))
    for a, (sx, sy) in enumerate(_CORNER_SIGNS):
        out[:, a] = 0.25 * (1.0 + sx * xi) * (1.0 + sy * eta)
    return out


def _shape_gradients(xi: np.ndarray, eta: np.ndarray) -> np.ndarray:
    """Reference gradients at reference points, shape (npts, 4, 2)."""
    out = np.empty((xi.size, 4, 2))
    for a, (sx, sy) in enumerate(_CORNER_SIGNS):
        out[:, a, 0] = 0.25 * sx * (1.0 + sy * eta)
        out[:, a, 1] = 0.25 * sy * (1.0 + sx * xi)
    return out


@dataclass(frozen=True)
class Grid:
    """Uniform Q1 grid on [-1, 1]^2."""

    n_cells: int
    h: float
    node_x: np.ndarray
    node_y: np.ndarray
    interior_index: np.ndarray  # full node -> interior index, -1 on boundary
    interior_nodes: np.ndarray  # interior index -> full node
    element_nodes: np.ndarray  # (n_elements, 4) full node indices, ccw
    gauss_x: np.ndarray  # (n_elements, 4) physical quadrature abscissae
    gauss_y: np.ndarray

    @property
    def n_nodes(self) -> int:
        return (self.n_cells + 1) ** 2

    @property
    def n_interior(self) -> int:
        return (self.n_cells - 1) ** 2

    @property
    def n_elements(self) -> int:
        return self.n_cells**2

    @property
    def quad_weight(self) -> float:
        """Quadrature weight carried by every Gauss point."""
        return (self.h / 2.0) ** 2


@dataclass(frozen=True)
class CoefficientField:
    """Values of a scalar field at the 2x2 Gauss points of every element."""

    values: np.ndarray  # (n_elements, 4)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=np.float64)
        if vals.ndim != 2 or vals.shape[1] != 4:
            raise ValueError("coefficient values must have shape (n_elements, 4)")
        if not np.all(np.isfinite(vals)):
            raise ValueError("coefficient field contains non-finite samples")
        object.__setattr__(self, "values", vals)


def build_grid(n_cells_per_side: int) -> Grid:
    """Build the uniform grid with n_cells_per_side cells in each direction."""
    n = int(n_cells_per_side)
    if n < 2:
        raise ValueError("need at least 2 cells per side")
    h = 2.0 / n
    coords_1d = np.linspace(-1.0, 1.0, n + 1)
    node_x = np.tile(coords_1d, n + 1)
    node_y = np.repeat(coords_1d, n + 1)

    ix = np.arange(n + 1)
    on_boundary_1d = (ix == 0) | (ix == n)
    boundary = on_boundary_1d[None, :] | on_boundary_1d[:, None]  # (iy, ix)
    interior_index = np.full((n + 1) ** 2, -1, dtype=np.int64)
    interior_nodes = np.flatnonzero(~boundary.ravel())
    interior_index[interior_nodes] = np.arange(interior_nodes.size)

    ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
    ex = ex.ravel()
    ey = ey.ravel()
    lower_left = ey * (n + 1) + ex
    element_nodes = np.column_stack(
        [lower_left, lower_left + 1, lower_left + n + 2, lower_left + n + 1]
    )

    cell_cx = -1.0 + (ex + 0.5) * h
    cell_cy = -1.0 + (ey + 0.5) * h
    gauss_x = cell_cx[:, None] + (h / 2.0) * _REF_POINTS[None, :, 0]
    gauss_y = cell_cy[:, None] + (h / 2.0) * _REF_POINTS[None, :, 1]

    return Grid(
        n_cells=n,
        h=h,
        node_x=node_x,
        node_y=node_y,
        interior_index=interior_index,
        interior_nodes=interior_nodes,
        element_nodes=element_nodes,
        gauss_x=gauss_x,
        gauss_y=gauss_y,
    )


def sample_coefficient(grid: Grid, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> CoefficientField:
    """Evaluate a scalar function at every element Gauss point.

    ``f`` must accept array arguments (x, y) and broadcast over them.
    """
    vals = np.asarray(f(grid.gauss_x, grid.gauss_y), dtype=np.float64)
    vals = np.broadcast_to(vals, grid.gauss_x.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError("coefficient function produced non-finite samples")
    return CoefficientField(values=vals)


def constant_field(grid: Grid, value: float) -> CoefficientField:
    return CoefficientField(values=np.full((grid.n_elements, 4), float(value)))


def _accumulate(grid: Grid, element_matrices: np.ndarray, eliminate_boundary: bool) -> csr_matrix:
    """Scatter per-element 4x4 matrices into a global sparse matrix."""
    conn = grid.element_nodes
    rows = conn[:, :, None].repeat(4, axis=2).reshape(-1)
    cols = conn[:, None, :].repeat(4, axis=1).reshape(-1)
    vals = element_matrices.reshape(-1)
    if eliminate_boundary:
        rid = grid.interior_index[rows]
        cid = grid.interior_index[cols]
        keep = (rid >= 0) & (cid >= 0)
        return csr_from_coo(grid.n_interior, grid.n_interior, rid[keep], cid[keep], vals[keep])
    return csr_from_coo(grid.n_nodes, grid.n_nodes, rows, cols, vals)


def assemble_mass(grid: Grid, eliminate_boundary: bool = True) -> csr_matrix:
    """Mass matrix of bilinear products, exact under 2x2 Gauss quadrature."""
    shapes = _shape_values(_REF_POINTS[:, 0], _REF_POINTS[:, 1])  # (4, 4)
    elem = grid.quad_weight * np.einsum("qa,qb->ab", shapes, shapes)
    element_matrices = np.broadcast_to(elem, (grid.n_elements, 4, 4))
    return _accumulate(grid, element_matrices, eliminate_boundary)


def assemble_stiffness(
    grid: Grid, field: CoefficientField, eliminate_boundary: bool = True
) -> csr_matrix:
    """Stiffness matrix of gradient products weighted by the field samples."""
    if field.values.shape[0] != grid.n_elements:
        raise ValueError(
            f"field has {field.values.shape[0]} elements, grid has {grid.n_elements}"
        )
    grads = _shape_gradients(_REF_POINTS[:, 0], _REF_POINTS[:, 1])  # (4, 4, 2)
    # Physical gradient = (2/h) * reference gradient; with the quadrature
    # weight (h/2)^2 the h factors cancel.
    pairwise = np.einsum("qad,qbd->qab", grads, grads)  # (4, 4, 4)
    element_matrices = np.einsum("eq,qab->eab", field.values, pairwise)
    return _accumulate(grid, element_matrices, eliminate_boundary)


def interpolate_nodal(grid: Grid, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """Nodal interpolation of f restricted to the interior nodes."""
    vals = np.asarray(
        f(grid.node_x[grid.interior_nodes], grid.node_y[grid.interior_nodes]),
        dtype=np.float64,
    )
    return np.broadcast_to(vals, (grid.n_interior,)).copy()
