"""Deterministic gradient blow-up time of the smooth step datum against its width."""
import argparse

import numpy as np

from noisereg import transport as tr
from noisereg.fields import make_sqrt_drift


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--x0", type=float, default=0.25)
    ap.add_argument("--widths", type=float, nargs="*", default=[0.1, 0.15, 0.2, 0.25, 0.3])
    args = ap.parse_args()
    b = make_sqrt_drift(-1)
    out_t = np.round(np.arange(0, 1.0 + 1e-12, 0.01), 12)
    for w in args.widths:
        u0 = tr.smooth_step_datum(args.x0, w)
        sols = [tr.solve_deterministic(u0, b, np.linspace(-1, 1, int(round(2 / h)) + 1), 1.0, 1e-3, out_t)
                for h in (1 / 64, 1 / 128, 1 / 256)]
        g = tr.gradient_diagnostic(sols)
        print(f"width={w:.2f}  verdict={g.verdict}  blow-up time={g.blowup_time}  (sqrt|x0| = {np.sqrt(args.x0):.3f})")


if __name__ == "__main__":
    main()
