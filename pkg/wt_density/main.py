#!/usr/bin/env python3
"""
Spectral Density Toolkit - Main Application

Command-line front door for the Weyl-Titchmarsh density pipeline. Every
subcommand reads one JSON run configuration and writes a table (CSV or
JSON) to ``--out`` or stdout:

    bands     band edges, bandwidths and gap widths of the periodic background
    critical  the critical points of the WvN perturbation on every band
    density   the density scan with refinement toward the critical points
    verify    the verification suites against the configured operator

Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

import argparse
import math
import sys
from typing import Callable, Dict, List, Optional

from wt_density import __version__
from wt_density.solvers.reduction import critical_points, validate_frequency
from wt_density.solvers.spectral import CSV_COLUMNS
from wt_density.utils.config import Config, RunConfig, describe_operator, load_run_config
from wt_density.utils.debugging import log_error, setup_logging
from wt_density.utils.errors import ConfigError
from wt_density.utils.output import FORMATS, write_table
from wt_density.utils.run_logger import (
    log_artifact,
    log_notes,
    log_operator,
    log_verification,
    setup_run_logging,
)
from wt_density.utils.ui_helpers import config_error_suggestions, print_friendly_system_error, print_status
from wt_density.workflows.orchestrator import resolve_bands, run_density_workflow
from wt_density.workflows.verifier import REPORT_COLUMNS, run_verification

# Set up logging
logger = setup_logging()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2

BAND_COLUMNS = ["band", "lower_label", "lower", "upper_label", "upper", "bandwidth", "gap_above"]
CRITICAL_COLUMNS = ["band", "sign", "lambda", "target_k", "k_residual"]


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    parser = argparse.ArgumentParser(
        prog="wt_density",
        description="Weyl-Titchmarsh spectral density of periodic Schrodinger operators with a WvN perturbation",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("bands", "Band edges, bandwidths and gap widths"),
        ("critical", "Critical points of the WvN term on every band"),
        ("density", "Density scan over the configured grid"),
        ("verify", "Run the verification suites"),
    ):
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", "-c", type=str, required=True, help="Path to the JSON run configuration")
        sub.add_argument("--out", "-o", type=str, default=None, help="Output file path (default: stdout)")
        sub.add_argument("--format", "-f", type=str, choices=FORMATS, default="csv",
                         help="Output format (default: csv)")
        sub.add_argument("--workers", "-w", type=int, default=None,
                         help="Worker processes for density scans (default: available cores)")
        sub.add_argument("--seed", "-s", type=int, default=None,
                         help="Seed of the randomized verification suites")
    return parser.parse_args(argv)


def cmd_bands(run_config: RunConfig, args: argparse.Namespace) -> int:
    bands = resolve_bands(run_config)
    gaps = bands.gaps
    rows = []
    for n, (lo, hi) in enumerate(bands.bands):
        rows.append({
            "band": n,
            "lower_label": bands.edge_label(2 * n),
            "lower": lo,
            "upper_label": bands.edge_label(2 * n + 1),
            "upper": hi,
            "bandwidth": hi - lo,
            "gap_above": gaps[n][1] - gaps[n][0] if n < len(gaps) else math.nan,
        })
    print_status("Band structure", [(r["band"], f"[{r['lower']:.10g}, {r['upper']:.10g}]") for r in rows])
    write_table(rows, BAND_COLUMNS, args.out, args.format,
                metadata={"period": bands.period, "lambda_max": bands.lambda_max,
                          "closed_gaps": list(bands.closed_gaps)})
    log_artifact(args.out, len(rows))
    return EXIT_OK


def cmd_critical(run_config: RunConfig, args: argparse.Namespace) -> int:
    spec = run_config.operator
    omega = spec.wvn.omega
    check = validate_frequency(spec.a, omega)
    if not check.passed:
        logger.warning(f"⚠️ frequency condition fails: 2 a omega / pi = {check.value:.12g} is an integer; "
                       "no critical points written")
        log_notes("Critical points", [f"frequency condition fails for omega={omega:g}; no table"])
        return EXIT_OK

    bands = resolve_bands(run_config)
    resonances = critical_points(spec.periodic, bands, omega)
    rows = [{
        "band": p.band,
        "sign": p.sign,
        "lambda": p.lam,
        "target_k": p.target_k,
        "k_residual": p.k_residual,
    } for p in resonances.points]
    write_table(rows, CRITICAL_COLUMNS, args.out, args.format,
                metadata={"omega": omega, "fraction": resonances.fraction})
    log_artifact(args.out, len(rows))
    return EXIT_OK


def cmd_density(run_config: RunConfig, args: argparse.Namespace) -> int:
    workers = Config(args).workers
    state = run_density_workflow(run_config, workers=workers, seed=args.seed)
    records = state["records"]
    rows = [r.as_row() for r in records]
    failed = [r for r in records if not r.ok]
    if failed:
        logger.warning(f"⚠️ {len(failed)} of {len(records)} points carry a failure reason")
    if state["dips"]:
        log_notes("Dips", [f"lambda={d.centre:.10g}: rho_min={d.rho_min:.6g} at {d.lam_min:.10g}, depth {d.depth:.4g}"
                           for d in state["dips"]])
    write_table(rows, CSV_COLUMNS, args.out, args.format,
                metadata={"subordinate": [r.lam for r in records if r.subordinate]})
    log_artifact(args.out, len(rows))
    return EXIT_OK


def cmd_verify(run_config: RunConfig, args: argparse.Namespace) -> int:
    rows = run_verification(run_config, seed=args.seed)
    log_verification(rows)
    write_table(rows, REPORT_COLUMNS, args.out, args.format)
    log_artifact(args.out, len(rows))
    failed = [r for r in rows if not r["passed"]]
    if failed:
        print_friendly_system_error(
            f"{len(failed)} of {len(rows)} verification checks failed",
            [f"{r['suite']}.{r['check']}: measured {r['measured']:.3e} > {r['threshold']:.1e}" for r in failed[:5]],
        )
        return EXIT_FAILURE
    logger.info(f"✅ all {len(rows)} verification checks passed")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[RunConfig, argparse.Namespace], int]] = {
    "bands": cmd_bands,
    "critical": cmd_critical,
    "density": cmd_density,
    "verify": cmd_verify,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main function: run one subcommand and return its exit code."""
    args = parse_args(argv)
    config = Config(args)
    setup_logging(config.log_level, config.log_dir)

    run_dir = setup_run_logging(config.log_dir, " ".join(["wt_density"] + list(argv if argv is not None else sys.argv[1:])))
    if run_dir:
        logger.info(f"Run logs will be saved to: {run_dir}")

    try:
        run_config = load_run_config(args.config)
        log_operator(describe_operator(run_config.operator))
        return COMMANDS[args.command](run_config, args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        print_friendly_system_error(str(e), config_error_suggestions(e.field))
        return EXIT_CONFIG
    except KeyboardInterrupt:
        logger.warning("⚠️ interrupted")
        return EXIT_FAILURE
    except Exception as e:
        error_log = log_error(f"{args.command} failed: {e}", exc_info=True)
        suggestions = ["Tighten numerics.rtol / numerics.atol or raise numerics.lambda_max",
                       "Run with WT_LOG_LEVEL=DEBUG for per-step diagnostics"]
        if error_log:
            suggestions.append(f"See the error log at {error_log}")
        print_friendly_system_error(f"{args.command} failed: {e}", suggestions)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
