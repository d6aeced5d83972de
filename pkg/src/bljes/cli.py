"""Command-line entry point: ``bljes run`` and ``bljes list``."""
from __future__ import annotations

import argparse
import logging
import sys

from .benchmarks import PROBLEM_NAMES
from .runner import DOMAINS, METHODS, MODES, RunConfig, config_from_mapping, emit_results, read_config_file, \
    run_experiment


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bljes", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a seeded experiment and write CSV results")
    run.add_argument("--config", help="flat key=value file; command-line flags override it")
    run.add_argument("--problem", help="problem name with optional parameters, e.g. gp-prior:lU=0.25,lL=0.25")
    run.add_argument("--method", choices=METHODS)
    run.add_argument("--mode", choices=MODES)
    run.add_argument("--domain", choices=DOMAINS, help="pool (grid candidates) or continuous")
    run.add_argument("--iters", type=int, help="number of BO iterations after the initial design")
    run.add_argument("--n0", type=int, help="initial random points")
    run.add_argument("--seeds", help="seed list: 3, 0-9 or 1,4,7")
    run.add_argument("--k-samples", type=int, help="Monte-Carlo optimum samples per iteration")
    run.add_argument("--rff-dim", type=int, help="random Fourier features per path")
    run.add_argument("--noise-std", type=float, help="observation noise standard deviation (all levels)")
    run.add_argument("--grid", type=int, help="pool points per dimension")
    run.add_argument("--out", help="output directory")
    run.add_argument("-v", "--verbose", action="store_true")

    sub.add_parser("list", help="list available problems")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list":
        for name in PROBLEM_NAMES:
            print(name)
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    values = read_config_file(args.config) if args.config else {}
    overrides = {
        "problem": args.problem, "method": args.method, "mode": args.mode, "domain_mode": args.domain,
        "iterations": args.iters, "n0": args.n0, "seeds": args.seeds, "K": args.k_samples,
        "rff_dim": args.rff_dim, "noise_std": args.noise_std, "grid": args.grid, "output_dir": args.out,
    }
    try:
        config = config_from_mapping(overrides, config_from_mapping(values, RunConfig()))
    except ValueError as exc:
        print(f"bljes: {exc}", file=sys.stderr)
        return 2
    results = run_experiment(config)
    try:
        paths = emit_results(results, config)
    except OSError as exc:
        print(f"bljes: cannot write results: {exc}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    failed = [r.seed for r in results if r.failed]
    if failed:
        print(f"bljes: failed seeds: {failed}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
