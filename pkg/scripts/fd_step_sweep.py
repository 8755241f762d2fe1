"""Finite-difference residuals of the derivative identities as the step varies.

Shows the truncation/round-off trade-off behind the default step of 1e-5.

    python3 scripts/fd_step_sweep.py --target pointwise:2 --points 10
"""

import argparse
import sys

import numpy as np

from slantlab import catalog
from slantlab.theorem_checks import codazzi_terms, kahler_residuals, prepare_point, sample_points


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--target", default="pointwise:2")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    fx = catalog.resolve(args.target)
    pts = sample_points(fx, args.points, args.seed)
    print(f"{'step':>8s} {'kahler max':>12s} {'codazzi max':>12s}")
    for step in np.logspace(-7, -3, 9):
        kah = cod = 0.0
        for i, z in enumerate(pts):
            pd = prepare_point(fx, z, i, step)
            kah = max(kah, max(kahler_residuals(pd.ctx).values()))
            lhs, rhs = codazzi_terms(pd)
            cod = max(cod, float(np.max(np.linalg.norm(lhs - rhs, axis=1))))
        print(f"{step:8.1e} {kah:12.3e} {cod:12.3e}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
