"""Flexible GMRES with right preconditioning, no restarts.

The preconditioned directions are stored alongside the Arnoldi basis, so
the preconditioner may change between iterations.  Orthogonalization is
modified Gram-Schmidt with one extra pass whenever the remaining component
along the basis exceeds a loss-of-orthogonality threshold.  The initial
guess is always zero, which makes the recurrence residual directly
comparable to the relative-residual stopping criterion.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = ["FgmresConfig", "SolveReport", "fgmres"]

_REORTH_THRESHOLD = 1e-8


@dataclass(frozen=True)
class FgmresConfig:
    tol: float
    max_iters: int = 500
    record_history: bool = True

    def __post_init__(self):
        if not 0.0 < self.tol < 1.0:
            raise ValueError("tolerance must lie in (0, 1)")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")


@dataclass
class SolveReport:
    iterations: int
    converged: bool
    residual_history: np.ndarray
    wall_time: float


def fgmres(
    apply_op: Callable[[np.ndarray], np.ndarray],
    apply_prec: Callable[[np.ndarray], np.ndarray] | None,
    b: np.ndarray,
    cfg: FgmresConfig,
) -> tuple[np.ndarray, SolveReport]:
    """Solve A x = b with right-preconditioned flexible GMRES from x = 0."""
    start = time.perf_counter()
    b = np.asarray(b, dtype=np.float64)
    n = b.size
    b_norm = np.linalg.norm(b)
    if b_norm == 0.0:
        raise ValueError("right-hand side must be nonzero")
    if apply_prec is None:
        apply_prec = lambda v: v

    max_iters = min(cfg.max_iters, n)
    basis = np.empty((max_iters + 1, n))
    directions = np.empty((max_iters, n))
    hessenberg = np.zeros((max_iters + 1, max_iters))
    cos = np.zeros(max_iters)
    sin = np.zeros(max_iters)
    g = np.zeros(max_iters + 1)
    g[0] = b_norm
    basis[0] = b / b_norm

    history = []
    converged = False
    n_iter = 0
    for j in range(max_iters):
        n_iter = j + 1
        z = apply_prec(basis[j])
        directions[j] = z
        w = np.asarray(apply_op(z), dtype=np.float64)
        w_norm_in = np.linalg.norm(w)

        for i in range(j + 1):
            hij = basis[i] @ w
            hessenberg[i, j] = hij
            w -= hij * basis[i]
        # One reorthogonalization pass if w kept a nontrivial component
        # along the basis.
        w_norm = np.linalg.norm(w)
        defect = np.abs(basis[: j + 1] @ w).max() if w_norm > 0 else 0.0
        if w_norm == 0.0 or defect > _REORTH_THRESHOLD * w_norm:
            for i in range(j + 1):
                corr = basis[i] @ w
                hessenberg[i, j] += corr
                w -= corr * basis[i]
            w_norm = np.linalg.norm(w)
        hessenberg[j + 1, j] = w_norm

        breakdown = w_norm <= 1e-14 * max(w_norm_in, 1e-300)
        if not breakdown:
            basis[j + 1] = w / w_norm

        # Rotate the new column into triangular form.
        for i in range(j):
            t1 = cos[i] * hessenberg[i, j] + sin[i] * hessenberg[i + 1, j]
            t2 = -sin[i] * hessenberg[i, j] + cos[i] * hessenberg[i + 1, j]
            hessenberg[i, j] = t1
            hessenberg[i + 1, j] = t2
        denom = np.hypot(hessenberg[j, j], hessenberg[j + 1, j])
        if denom == 0.0:
            cos[j], sin[j] = 1.0, 0.0
        else:
            cos[j] = hessenberg[j, j] / denom
            sin[j] = hessenberg[j + 1, j] / denom
        hessenberg[j, j] = denom
        hessenberg[j + 1, j] = 0.0
        g[j + 1] = -sin[j] * g[j]
        g[j] = cos[j] * g[j]

        rel_res = abs(g[j + 1]) / b_norm
        history.append(rel_res)
        if rel_res <= cfg.tol or breakdown:
            converged = True
            break

    # Back-substitute and combine the stored directions.
    m = n_iter
    y = np.zeros(m)
    for i in range(m - 1, -1, -1):
        y[i] = (g[i] - hessenberg[i, i + 1 : m] @ y[i + 1 : m]) / hessenberg[i, i]
    x = directions[:m].T @ y

    report = SolveReport(
        iterations=m,
        converged=converged,
        residual_history=np.array(history) if cfg.record_history else np.array([]),
        wall_time=time.perf_counter() - start,
    )
    return x, report
