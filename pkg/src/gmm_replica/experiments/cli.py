"""Command line entry point: ``gmm-replica <command> --config FILE``.

Exit codes: 0 success, 1 configuration error, 2 numeric failure in at
least one cell.
"""

from __future__ import annotations

import argparse
import logging
import sys

from ..covariance import CovarianceKind
from ..replica import ReplicaError, theoretical_power, theoretical_precision
from . import runner
from .config import Cell, ConfigError, ExperimentConfig, load_config

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

COMMANDS = ("solve", "precision", "coverage", "power", "histogram", "all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gmm-replica",
        description="Replica order parameters and de-biased inference experiments",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="TOML config file (defaults are used when omitted)")
    parser.add_argument("--seed", type=int, help="override the master seed")
    parser.add_argument("--out-dir", help="override the output directory")
    parser.add_argument("--threads", type=int, help="worker processes for grid cells")
    parser.add_argument("--structure", help="solve: covariance structure (default: first in config)")
    parser.add_argument("--sparsity", type=float, help="solve: sparsity level (default: first in config)")
    parser.add_argument("--log-lambda", type=float, help="solve: log penalty (default: first in config)")
    parser.add_argument("--trace", help="solve: write the iteration trace to this CSV")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def _solve(config: ExperimentConfig, args) -> int:
    structure = CovarianceKind.parse(args.structure or config.structures[0]).value
    sparsity = args.sparsity if args.sparsity is not None else config.sparsity[0]
    log_lambda = args.log_lambda if args.log_lambda is not None else config.log_lambda[0]
    cell = Cell(structure, float(sparsity), float(log_lambda), -1, -1, -1)
    try:
        design, params, trace = runner.solve_cell(config, cell)
    except ReplicaError as exc:
        print(f"solve failed: {exc}", file=sys.stderr)
        trace = getattr(exc, "trace", None)
        if args.trace and trace is not None:
            trace.to_csv(args.trace)
        return EXIT_NUMERIC
    if args.trace:
        trace.to_csv(args.trace)
    print(f"cell: structure={structure} sparsity={sparsity} log_lambda={log_lambda}")
    for name, value in params.to_dict().items():
        print(f"{name:>8} = {value:.10g}")
    print(f"{'iters':>8} = {len(trace.residuals)}")
    print(f"precision (theory) = {theoretical_precision(params, design.mu_norm):.6f}")
    print(f"power (theory)     = {theoretical_power(params, design, level=config.level):.6f}")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = load_config(args.config) if args.config else ExperimentConfig()
        config = config.with_overrides(seed=args.seed, output_dir=args.out_dir, threads=args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    if args.command == "solve":
        return _solve(config, args)
    if args.command == "histogram":
        try:
            path = runner.run_histogram_experiment(config)
        except ReplicaError as exc:
            print(f"histogram cell failed: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        print(path)
        return EXIT_OK

    if args.command == "all":
        results, paths, hist_ok = runner.run_all(config)
    else:
        results = runner.run_campaign(config)
        writer = {
            "precision": runner.run_precision_experiment,
            "coverage": runner.run_coverage_experiment,
            "power": runner.run_power_experiment,
        }[args.command]
        paths, hist_ok = [writer(config, results)], True
    for path in paths:
        print(path)
    failed = [r for r in results if not r.ok]
    for r in failed:
        print(f"cell {r.cell.ident()} {r.status}", file=sys.stderr)
    return EXIT_NUMERIC if failed or not hist_ok else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
