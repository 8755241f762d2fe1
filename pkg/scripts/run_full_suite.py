"""Run the check suite on every catalog entry and write one JSON report per target.

    python3 scripts/run_full_suite.py --k 2 3 --points 100 --outdir reports/
"""

import argparse
import sys
import time
from pathlib import Path

from slantlab.theorem_checks import SuiteConfig, run_suite


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", type=int, nargs="+", default=[2, 3])
    p.add_argument("--points", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--outdir", default="reports")
    args = p.parse_args(argv)
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    targets = [f"{kind}:{k}" for k in args.k for kind in ("pointwise", "kslant")] + ["flat", "flatslant", "line"]
    worst_exit = 0
    for target in targets:
        t0 = time.perf_counter()
        rep = run_suite(SuiteConfig(target, points=args.points, seed=args.seed))
        path = outdir / (target.replace(":", "_") + ".json")
        path.write_text(rep.to_json(), encoding="utf-8")
        c = rep.summary["status_counts"]
        print(f"{target:12s} pass {c['pass']:6d}  fail {c['fail']:3d}  hyp {c['hypothesis-not-met']:5d}  "
              f"amb {c['ambiguous']:3d}  {time.perf_counter() - t0:6.1f}s  -> {path}")
        worst_exit = max(worst_exit, rep.exit_code)
    return worst_exit


if __name__ == "__main__":
    sys.exit(main())
