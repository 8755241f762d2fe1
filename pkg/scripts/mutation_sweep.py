"""Inject each known fault and list every check that catches it.

    python3 scripts/mutation_sweep.py --points 10
"""

import argparse
import sys

from slantlab.theorem_checks import FAIL, MUTATIONS, SuiteConfig, run_suite


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args(argv)
    missed = 0
    for mutation, (check_id, target) in sorted(MUTATIONS.items()):
        rep = run_suite(SuiteConfig(target, points=args.points, seed=args.seed, mutation=mutation), workers=1)
        caught = sorted({r.check_id for r in rep.results if r.status == FAIL})
        hit = sum(r.status == FAIL for r in rep.results if r.check_id == check_id)
        missed += hit != args.points
        print(f"{mutation:16s} on {target:12s} target {check_id}: {hit}/{args.points} points")
        for cid in caught:
            if cid != check_id:
                print(f"{'':20s}also fails: {cid}")
    return 1 if missed else 0


if __name__ == "__main__":
    sys.exit(main())
