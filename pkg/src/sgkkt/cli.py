"""Command-line entry point.

``sgkkt run <config>`` executes the configured preconditioner sweep and
prints (or writes) the result table; ``sgkkt spectra <config>`` assembles a
desk-scale instance and verifies the spectral-equivalence bounds.  Exit
codes: 0 success, 1 configuration error, 2 internal error.

Heavy imports happen inside main() so the SGKKT_NUM_THREADS cap can be
applied to the BLAS thread pools before they are created.
"""

from __future__ import annotations

import argparse
import os
import sys

_THREAD_ENV_TARGETS = (
    "OMP_NUM_THREADS",
    "OPENBLAS_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
)


def _apply_thread_cap() -> None:
    cap = os.environ.get("SGKKT_NUM_THREADS")
    if not cap:
        return
    for name in _THREAD_ENV_TARGETS:
        os.environ.setdefault(name, cap)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgkkt",
        description="Stochastic Galerkin KKT benchmark runner",
    )
    from . import __version__

    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured preconditioner sweep")
    run.add_argument("config", help="path to the experiment config file")
    run.add_argument(
        "--format", choices=("csv", "markdown"), default="markdown", dest="fmt"
    )
    run.add_argument("--out", default=None, help="write the table to this path")

    spectra = sub.add_parser("spectra", help="verify the spectral-equivalence bounds")
    spectra.add_argument("config", help="path to the experiment config file")
    spectra.add_argument("--out", default=None, help="write the CSV report to this path")
    return parser


def _cmd_run(args) -> int:
    from .bench import emit_table, parse_config, run_experiment

    with open(args.config, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    rows = run_experiment(cfg)
    table = emit_table(rows, format=args.fmt)
    out = args.out or cfg.out
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(table)
    else:
        sys.stdout.write(table)
    return 0


def _cmd_spectra(args) -> int:
    from .bench import build_bundle, parse_config
    from .spectral import format_reports_csv, format_reports_text, run_chain_checks

    with open(args.config, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    bundle = build_bundle(cfg)
    reports = run_chain_checks(bundle.system, list(cfg.resolved_n_tau))
    sys.stdout.write(format_reports_text(reports))
    out = args.out or cfg.out
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(format_reports_csv(reports))
    return 0


def main(argv: list[str] | None = None) -> int:
    _apply_thread_cap()
    parser = _build_parser()
    args = parser.parse_args(argv)
    from .bench import ConfigError

    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "spectra":
            return _cmd_spectra(args)
        parser.error(f"unknown command {args.command!r}")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"sgkkt: config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        print(f"sgkkt: internal error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
