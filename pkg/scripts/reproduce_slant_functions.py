"""Measured slant angles of the catalog examples against their closed forms.

    python3 scripts/reproduce_slant_functions.py --k 3 --points 20
"""

import argparse
import csv
import sys
from dataclasses import dataclass

import numpy as np

from slantlab import catalog
from slantlab.expr_dsl import eval_jet2
from slantlab.tangent_geometry import analyze_point
from slantlab.theorem_checks import sample_points


@dataclass(frozen=True)
class Config:
    k: int = 3
    points: int = 20
    seed: int = 0
    out: str | None = None


def angle_table(kind: str, cfg: Config) -> list[dict]:
    fx = catalog.resolve(f"{kind}:{cfg.k}")
    rows = []
    for idx, z in enumerate(sample_points(fx, cfg.points, cfg.seed)):
        pa = analyze_point(eval_jet2(fx.immersion, z), fx.ambient, z)
        E, J = pa.frame.tan_basis, pa.frame.coord_basis
        for dist, cols in fx.distribution_fields.items():
            B, _ = np.linalg.qr(J[:, cols])
            gaps = [np.linalg.norm(B @ B.T - E @ c.projector @ E.T, 2) for c in pa.decomposition.clusters]
            cl = pa.decomposition.clusters[int(np.argmin(gaps))]
            expected = fx.expected_theta(dist, z)
            rows.append({"kind": kind, "point": idx, "D": dist, "multiplicity": cl.multiplicity,
                         "theta": cl.angle, "expected": expected, "error": abs(cl.angle - expected)})
    return rows


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="optional CSV path")
    cfg = Config(**vars(p.parse_args(argv)))
    rows = angle_table("pointwise", cfg) + angle_table("kslant", cfg)
    print(f"{'kind':10s} {'D':>2s} {'mean theta':>14s} {'std':>10s} {'max error':>10s}")
    for kind in ("pointwise", "kslant"):
        for dist in range(cfg.k + 1):
            sel = [r for r in rows if r["kind"] == kind and r["D"] == dist]
            th = np.array([r["theta"] for r in sel])
            err = max(r["error"] for r in sel)
            print(f"{kind:10s} {dist:2d} {th.mean():14.10f} {th.std():10.2e} {err:10.2e}")
    if cfg.out:
        with open(cfg.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
