"""Config-driven experiment runner and table emission.

Configs are plain text, one ``key = value`` per line with ``#`` comments.
A run sweeps the configured mass-solver and truncation settings over one
assembled problem and reports iteration counts, timings and final
residuals; tables come out as CSV or GitHub-flavored markdown with a fixed
column order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace
from typing import Callable

import numpy as np

from .krylov import FgmresConfig, SolveReport, fgmres
from .operators import (
    SteadyKKT,
    TimeKKT,
    matricize,
    steady_kkt_apply,
    steady_rhs,
    time_kkt_apply,
    time_rhs,
    vectorize,
)
from .preconditioners import build_steady_preconditioner, build_time_preconditioner
from .problems import ProblemBundle, build_steady_problem, build_time_problem

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ResultRow",
    "emit_table",
    "parse_config",
    "run_experiment",
    "serialize_config",
    "solve_bundle",
]

_MASS_SOLVERS = ("cheb5", "cheb10", "direct")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str
    n: int
    m_xi: int
    p: int
    sigma_k: float = 0.1
    beta: float = 1e-4
    gamma: float = 1.0
    coefficient: str = "lognormal"
    coefficient_degree: int | None = None
    n_t: int = 8
    tol: float | None = None
    mass_solver: tuple[str, ...] = ("cheb5",)
    n_tau: tuple[int, ...] | None = None
    richardson: int = 1
    max_iters: int = 500
    out: str | None = None

    @property
    def n_terms(self) -> int:
        """Number of coefficient expansion terms the operator carries."""
        if self.coefficient == "affine":
            return self.m_xi + 1
        deg = self.coefficient_degree if self.coefficient_degree is not None else 2 * self.p
        return math.comb(self.m_xi + deg, deg)

    @property
    def resolved_tol(self) -> float:
        if self.tol is not None:
            return self.tol
        return 1e-8 if self.problem == "steady" else 1e-4

    @property
    def resolved_n_tau(self) -> tuple[int, ...]:
        if self.n_tau is not None:
            return self.n_tau
        return (1, self.m_xi + 1, self.n_terms)


_REQUIRED = ("problem", "n", "m_xi", "p")
_INT_KEYS = {"n", "m_xi", "p", "coefficient_degree", "n_t", "richardson", "max_iters"}
_FLOAT_KEYS = {"sigma_k", "beta", "gamma", "tol"}


def _parse_n_tau_token(token: str, m_xi: int, n_terms: int) -> int:
    token = token.strip().lower()
    if token in ("m+1", "mxi+1", "m_xi+1"):
        return m_xi + 1
    if token in ("na", "n_a", "full"):
        return n_terms
    try:
        return int(token)
    except ValueError as exc:
        raise ConfigError(f"cannot parse truncation value {token!r}") from exc


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate a key = value config, naming offending lines."""
    raw: dict[str, str] = {}
    lines: dict[str, int] = {}
    known = {f.name for f in fields(ExperimentConfig)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
        lines[key] = lineno

    for key in _REQUIRED:
        if key not in raw:
            raise ConfigError(f"missing required key {key!r}")

    kwargs: dict = {}
    for key, value in raw.items():
        lineno = lines[key]
        try:
            if key in _INT_KEYS:
                kwargs[key] = int(value)
            elif key in _FLOAT_KEYS:
                kwargs[key] = float(value)
            elif key == "mass_solver":
                items = tuple(v.strip() for v in value.split(","))
                for item in items:
                    if item not in _MASS_SOLVERS:
                        raise ConfigError(
                            f"line {lineno}: unknown mass solver {item!r}"
                        )
                kwargs[key] = items
            elif key == "n_tau":
                kwargs[key] = value  # resolved below, needs m_xi and the term count
            else:
                kwargs[key] = value
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: cannot parse {key} = {value!r}") from exc

    if kwargs.get("problem") not in ("steady", "time"):
        raise ConfigError(f"line {lines['problem']}: problem must be 'steady' or 'time'")
    if kwargs.get("coefficient", "lognormal") not in ("affine", "lognormal"):
        raise ConfigError(f"line {lines['coefficient']}: unknown coefficient kind")

    n_tau_raw = kwargs.pop("n_tau", None)
    cfg = ExperimentConfig(**kwargs)
    if n_tau_raw is not None:
        try:
            values = tuple(
                _parse_n_tau_token(tok, cfg.m_xi, cfg.n_terms)
                for tok in n_tau_raw.split(",")
            )
        except ConfigError as exc:
            raise ConfigError(f"line {lines['n_tau']}: {exc}") from None
        cfg = replace(cfg, n_tau=values)

    _validate(cfg, lines)
    return cfg


def _validate(cfg: ExperimentConfig, lines: dict[str, int]) -> None:
    def fail(key: str, message: str):
        where = f"line {lines[key]}: " if key in lines else ""
        raise ConfigError(f"{where}{message}")

    if cfg.n < 2:
        fail("n", "n must be at least 2")
    if cfg.m_xi < 1:
        fail("m_xi", "m_xi must be positive")
    if cfg.p < 0:
        fail("p", "p must be nonnegative")
    if cfg.sigma_k < 0:
        fail("sigma_k", "sigma_k must be nonnegative")
    if cfg.beta <= 0:
        fail("beta", "beta must be positive")
    if cfg.gamma < 0:
        fail("gamma", "gamma must be nonnegative")
    if cfg.tol is not None and not 0 < cfg.tol < 1:
        fail("tol", "tol must lie in (0, 1)")
    if cfg.n_t < 1:
        fail("n_t", "n_t must be positive")
    if cfg.richardson < 1:
        fail("richardson", "richardson must be positive")
    if cfg.max_iters < 1:
        fail("max_iters", "max_iters must be positive")
    if cfg.coefficient_degree is not None and cfg.coefficient_degree < 0:
        fail("coefficient_degree", "coefficient_degree must be nonnegative")
    for n_tau in cfg.resolved_n_tau:
        if not 1 <= n_tau <= cfg.n_terms:
            fail("n_tau", f"truncation {n_tau} outside [1, {cfg.n_terms}]")


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical text form; parse(serialize(cfg)) == cfg."""
    lines = [
        f"problem = {cfg.problem}",
        f"n = {cfg.n}",
        f"m_xi = {cfg.m_xi}",
        f"p = {cfg.p}",
        f"sigma_k = {cfg.sigma_k!r}",
        f"beta = {cfg.beta!r}",
        f"gamma = {cfg.gamma!r}",
        f"coefficient = {cfg.coefficient}",
    ]
    if cfg.coefficient_degree is not None:
        lines.append(f"coefficient_degree = {cfg.coefficient_degree}")
    lines.append(f"n_t = {cfg.n_t}")
    if cfg.tol is not None:
        lines.append(f"tol = {cfg.tol!r}")
    lines.append(f"mass_solver = {', '.join(cfg.mass_solver)}")
    if cfg.n_tau is not None:
        lines.append(f"n_tau = {', '.join(str(v) for v in cfg.n_tau)}")
    lines.append(f"richardson = {cfg.richardson}")
    lines.append(f"max_iters = {cfg.max_iters}")
    if cfg.out is not None:
        lines.append(f"out = {cfg.out}")
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ResultRow:
    problem: str
    n: int
    n_h: int
    m_xi: int
    p: int
    n_xi: int
    sigma: float
    beta: float
    tol: float
    mass_solver: str
    n_tau: int
    iterations: int
    converged: bool
    seconds: float
    final_rel_res: float


def build_bundle(cfg: ExperimentConfig) -> ProblemBundle:
    common = dict(
        n=cfg.n,
        m_xi=cfg.m_xi,
        p=cfg.p,
        sigma_k=cfg.sigma_k,
        beta=cfg.beta,
        gamma=cfg.gamma,
        coefficient=cfg.coefficient,
        coefficient_degree=cfg.coefficient_degree,
    )
    if cfg.problem == "steady":
        return build_steady_problem(**common)
    return build_time_problem(n_t=cfg.n_t, **common)


def _steady_callables(sys: SteadyKKT, precond) -> tuple[Callable, Callable, np.ndarray]:
    size = sys.block_size()

    def unpack(v):
        return (
            matricize(v[:size], sys.n_h, sys.n_xi),
            matricize(v[size : 2 * size], sys.n_h, sys.n_xi),
            matricize(v[2 * size :], sys.n_h, sys.n_xi),
        )

    def pack(blocks):
        return np.concatenate([vectorize(b) for b in blocks])

    def apply_op(v):
        return pack(steady_kkt_apply(sys, *unpack(v)))

    def apply_prec(v):
        return pack(precond.apply(*unpack(v)))

    rhs = pack(steady_rhs(sys))
    return apply_op, apply_prec, rhs


def solve_bundle(
    bundle: ProblemBundle,
    mass_solver: str,
    n_tau: int,
    tol: float,
    richardson: int = 1,
    max_iters: int = 500,
) -> tuple[np.ndarray, SolveReport]:
    """Assemble the preconditioner and run the flexible GMRES solve."""
    sys = bundle.system
    cfg = FgmresConfig(tol=tol, max_iters=max_iters)
    if isinstance(sys, TimeKKT):
        precond = build_time_preconditioner(
            sys,
            bundle.partition,
            mass_solver=mass_solver,
            n_tau=n_tau,
            richardson_steps=richardson,
        )
        apply_op = lambda v: time_kkt_apply(sys, v)
        apply_prec = lambda v: precond.apply(v)
        rhs = time_rhs(sys)
    else:
        precond = build_steady_preconditioner(
            sys,
            bundle.partition,
            mass_solver=mass_solver,
            n_tau=n_tau,
            richardson_steps=richardson,
        )
        apply_op, apply_prec, rhs = _steady_callables(sys, precond)
    return fgmres(apply_op, apply_prec, rhs, cfg)


def run_experiment(cfg: ExperimentConfig) -> list[ResultRow]:
    """One row per (mass_solver, n_tau) pair, in config order."""
    bundle = build_bundle(cfg)
    steady = bundle.steady_system
    tol = cfg.resolved_tol
    rows = []
    for solver in cfg.mass_solver:
        for n_tau in cfg.resolved_n_tau:
            _, report = solve_bundle(
                bundle,
                mass_solver=solver,
                n_tau=n_tau,
                tol=tol,
                richardson=cfg.richardson,
                max_iters=cfg.max_iters,
            )
            final = float(report.residual_history[-1]) if report.residual_history.size else math.nan
            rows.append(
                ResultRow(
                    problem=cfg.problem,
                    n=cfg.n,
                    n_h=steady.n_h,
                    m_xi=cfg.m_xi,
                    p=cfg.p,
                    n_xi=steady.n_xi,
                    sigma=cfg.sigma_k,
                    beta=cfg.beta,
                    tol=tol,
                    mass_solver=solver,
                    n_tau=n_tau,
                    iterations=report.iterations,
                    converged=report.converged,
                    seconds=report.wall_time,
                    final_rel_res=final,
                )
            )
    return rows


_COLUMNS = (
    "problem",
    "n",
    "N_h",
    "m_xi",
    "p",
    "N_xi",
    "sigma",
    "beta",
    "tol",
    "mass_solver",
    "n_tau",
    "iters",
    "converged",
    "seconds",
    "final_rel_res",
)


def _row_cells(row: ResultRow) -> list[str]:
    return [
        row.problem,
        str(row.n),
        str(row.n_h),
        str(row.m_xi),
        str(row.p),
        str(row.n_xi),
        f"{row.sigma:.12g}",
        f"{row.beta:.12g}",
        f"{row.tol:.12g}",
        row.mass_solver,
        str(row.n_tau),
        str(row.iterations),
        str(row.converged).lower(),
        f"{row.seconds:.6f}",
        f"{row.final_rel_res:.6e}",
    ]


def emit_table(rows: list[ResultRow], format: str = "csv") -> str:
    """Render result rows with the fixed column order."""
    if not rows:
        raise ValueError("no rows to emit")
    cells = [_row_cells(r) for r in rows]
    if format == "csv":
        lines = [",".join(_COLUMNS)]
        lines.extend(",".join(c) for c in cells)
        return "\n".join(lines) + "\n"
    if format == "markdown":
        lines = ["| " + " | ".join(_COLUMNS) + " |"]
        lines.append("|" + "|".join([" --- "] * len(_COLUMNS)) + "|")
        lines.extend("| " + " | ".join(c) + " |" for c in cells)
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown table format {format!r}")
