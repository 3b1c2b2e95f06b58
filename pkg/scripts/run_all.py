"""Run every registered scenario with its shipped config and print the verdicts."""
import argparse
import os

from noisereg.config import load
from noisereg.scenarios import SCENARIOS, run_scenario, scenario_params

ROOT = os.path.join(os.path.dirname(os.path.abspath(__file__)), "..")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="runs")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--only", nargs="*", default=None)
    args = ap.parse_args()
    for name in SCENARIOS:
        if args.only and name not in args.only:
            continue
        cfg = load(os.path.join(ROOT, "configs", f"{name}.yaml"), scenario_params())
        cfg.out, cfg.workers = args.out, args.workers
        rep = run_scenario(cfg)
        flags = " ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in rep.verdicts.items())
        print(f"{name:22s} {rep.wall_clock:6.1f}s  {flags}")


if __name__ == "__main__":
    main()
