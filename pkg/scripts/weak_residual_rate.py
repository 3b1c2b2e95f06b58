"""Observed order of the tested transport residual for b = 0 under dt halving."""
import argparse

import numpy as np

from noisereg import stochastic_flow as sf
from noisereg import transport as tr
from noisereg.fields import make_zero_drift


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=32)
    ap.add_argument("--levels", type=int, default=4)
    ap.add_argument("--seed", type=int, default=1234)
    args = ap.parse_args()
    theta = tr.TestFunction(0.0, 0.5)
    xs = np.linspace(-0.6, 0.6, 121)
    n_fine = 100 * 2 ** (args.levels - 1)
    res = np.zeros((args.levels, args.paths))
    for i in range(args.paths):
        fine = sf.sample_wiener(args.seed, i, sf.uniform_times(1.0, n_fine))
        for j in range(args.levels):
            p = fine.coarsen(2 ** (args.levels - 1 - j))
            sol = tr.solve_stochastic(tr.tanh_datum(), make_zero_drift(1), 1.0, p, xs)
            res[j, i] = tr.weak_residual(sol, theta, make_zero_drift(1), 1.0).max_abs
    m = res.mean(axis=1)
    dts = 1.0 / (n_fine / 2 ** np.arange(args.levels - 1, -1, -1))
    for dt, v in zip(dts, m):
        print(f"dt={dt:.5f}  mean max|R|={v:.5f}")
    slope = np.polyfit(np.log(dts), np.log(m), 1)[0]
    # bootstrap over paths
    rng = np.random.default_rng(args.seed)
    boot = [np.polyfit(np.log(dts), np.log(res[:, rng.integers(0, args.paths, args.paths)].mean(axis=1)), 1)[0]
            for _ in range(200)]
    print(f"fitted order {slope:.3f} +- {np.std(boot):.3f} (bootstrap s.e.)")


if __name__ == "__main__":
    main()
