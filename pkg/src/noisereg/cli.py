"""Command line: ``noisereg run|list|accept``.

Exit codes: 0 success, 1 validation error, 2 numerical abort, 3 acceptance failure.
"""
from __future__ import annotations

import argparse
import sys
import warnings

from .config import ConfigError, load
from .scenarios import NumericalAbort, list_scenarios, run_scenario, scenario_params

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_ACCEPT = 0, 1, 2, 3


def _u64(s):
    v = int(s)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _positive(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="noisereg", description="regularization-by-noise experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("run", "accept"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=(name == "run"), help="YAML file (scenario, or acceptance tolerances)")
        s.add_argument("--seed", type=_u64, default=None)
        s.add_argument("--out", default=None)
        s.add_argument("--workers", type=_positive, default=None)
        s.add_argument("--quiet", action="store_true")
    sub.add_parser("list")
    return p


def _run(args) -> int:
    cfg = load(args.config, scenario_params())
    if args.seed is not None:
        cfg.seed = args.seed
    if args.workers is not None:
        cfg.workers = args.workers
    if args.out is not None:
        cfg.out = args.out
    rep = run_scenario(cfg)
    if not args.quiet:
        print(f"scenario {rep.scenario}  config {rep.config_hash[:16]}  {rep.wall_clock:.1f} s")
        for k, v in rep.verdicts.items():
            print(f"  [{'PASS' if v else 'FAIL'}] {k}")
        for a in rep.artifacts:
            print(f"  wrote {a}")
    return EXIT_OK


def _accept(args) -> int:
    from .acceptance import SEED, load_tolerances, run_acceptance

    tol = load_tolerances(args.config) if args.config else None
    rep = run_acceptance(args.out or "acceptance", args.seed if args.seed is not None else SEED, tol,
                         args.workers or 1, quiet=args.quiet)
    if not args.quiet:
        print(f"verdict table: {rep.artifacts[0]}")
        print("ACCEPTED" if rep.passed else "NOT ACCEPTED")
    return EXIT_OK if rep.passed else EXIT_ACCEPT


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "quiet", False):
        warnings.simplefilter("ignore")
    try:
        if args.command == "list":
            print("\n".join(list_scenarios()))
            return EXIT_OK
        if args.command == "run":
            return _run(args)
        return _accept(args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
