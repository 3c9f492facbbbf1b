"""Command-line entry point: simulate, sweep, analyze, steiner-check."""

from __future__ import annotations

import argparse
import logging
import sys
import time

from .convolution import build_stencil
from .grid import read_field_csv
from .harness import ConfigError, hard_failures, load_config, run, sweep
from .integrator import SimParams
from .kernels import kernel_by_name
from .stationary import analyze
from .steiner import run_property_suite


def _report_failures(failures: list[str]) -> int:
    for msg in failures:
        print(f"ASSERTION FAILED: {msg}", file=sys.stderr)
    return 1 if failures else 0


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    result = run(cfg, args.output)
    print(result.report.text())
    if result.output is not None:
        print(f"artifacts written to {result.output}")
    return _report_failures(result.hard_failures())


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    if args.workers is not None:
        from dataclasses import replace

        cfg = replace(cfg, workers=args.workers)
    result = sweep(cfg, args.output)
    for row in result.rows:
        if row.get("error"):
            print(f"{row['kernel']} m={row['m']:g} M={row['M']:g}: error {row['error']}")
        else:
            print(
                f"{row['kernel']} m={row['m']:g} M={row['M']:g}: max {row['max_density']:.6g} "
                f"steps {row['steps']} converged {row['converged']}"
            )
    if result.path is not None:
        print(f"wrote {result.path}")
    return _report_failures([f"point {i}: {msg}" for i, msg in result.failures])


def cmd_analyze(args) -> int:
    f = read_field_csv(args.field)
    k = kernel_by_name(args.kernel, f.dims, args.table)
    s = build_stencil(k, f.dx, f.dims, args.truncation)
    p = SimParams(m=args.m, epsilon=args.epsilon, dt=f.dx)
    report = analyze(f, k, s, p)
    print(report.text())
    return _report_failures(hard_failures(report))


def cmd_steiner(args) -> int:
    start = time.perf_counter()
    results = run_property_suite(
        seed=args.seed,
        n_pairs=args.pairs,
        n_tuples=args.tuples,
        n_routes=args.routes,
        n_functions=args.functions,
        n_unions=args.unions,
    )
    for r in results:
        print(r.line())
    print(f"elapsed {time.perf_counter() - start:.1f} s")
    return 0 if all(r.ok for r in results) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggdiff", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one configuration to a stationary state")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("sweep", help="run every (m, M) point of a configuration's [sweep] list")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (overrides [output] directory)")
    p.add_argument("-j", "--workers", type=int, help="parallel worker processes")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="report on a saved field")
    p.add_argument("field", help="field CSV written by simulate")
    p.add_argument("--kernel", required=True, help="bump, exponential, parabola or custom")
    p.add_argument("--m", type=float, required=True, help="diffusion exponent")
    p.add_argument("--epsilon", type=float, default=1.0, help="diffusion coefficient (default 1)")
    p.add_argument("--table", help="two-column radius,value file for --kernel custom")
    p.add_argument("--truncation", type=float, help="stencil radius for unbounded kernels")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("steiner-check", help="randomized symmetrization and energy-derivative checks")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=10_000, help="interval pairs for the sign check")
    p.add_argument("--tuples", type=int, default=1_000, help="overlapping pairs for the lower bound")
    p.add_argument("--routes", type=int, default=200, help="pairs compared against finite differences")
    p.add_argument("--functions", type=int, default=100, help="random step functions")
    p.add_argument("--unions", type=int, default=1_000, help="random interval unions")
    p.set_defaults(func=cmd_steiner)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
