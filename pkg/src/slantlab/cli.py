"""Command-line entry point: ``slantlab list | classify | verify | report``."""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

from . import catalog
from .ambient import StructureError
from .connection_geometry import FD_STEP
from .expr_dsl import DomainViolation
from .tangent_geometry import CLUSTER_TOL, ImmersionDegenerate, SpectrumError
from .theorem_checks import (
    FAIL,
    MUTATIONS,
    SuiteConfig,
    SuiteReport,
    Tolerances,
    classify,
    load_report,
    resolve_target,
    run_suite,
    summarize,
)


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    target: str
    points: int = 50
    seed: int = 0
    tolerances: dict[str, float] = field(default_factory=dict)
    fd_step: float = FD_STEP
    format: str = "json"
    out: str | None = None
    k: int | None = None
    mutation: str | None = None
    ambient: str | None = None

    def __post_init__(self):
        if self.points < 1:
            raise UsageError("--points must be >= 1")
        if any(not v > 0 for v in self.tolerances.values()):
            raise UsageError("tolerances must be positive")
        if not 1e-8 < self.fd_step < 1e-2:
            raise UsageError("--fd-step must lie in (1e-8, 1e-2)")
        if self.format not in ("json", "csv"):
            raise UsageError("--format must be json or csv")

    def suite_config(self) -> SuiteConfig:
        try:
            tol = Tolerances().with_overrides(self.tolerances)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        return SuiteConfig(
            self.target,
            k=self.k,
            points=self.points,
            seed=self.seed,
            tolerances=tol,
            fd_step=self.fd_step,
            mutation=self.mutation,
            ambient=self.ambient,
        )


def _parse_tol(items: list[str]) -> dict[str, float]:
    out = {}
    for item in items:
        key, sep, val = item.partition("=")
        if not sep:
            raise UsageError(f"--tol expects class=value, got {item!r}")
        try:
            out[key] = float(val)
        except ValueError:
            raise UsageError(f"--tol value for {key!r} is not a number") from None
    return out


def _parse_point(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",")]
    except ValueError:
        raise UsageError(f"--point expects comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slantlab", description="Slant decompositions and identity checks for immersions into flat C^m.")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("list", help="list catalog examples and fixtures")

    c = sub.add_parser("classify", help="slant decomposition at one parameter point")
    c.add_argument("target", help="catalog id (pointwise:2, kslant:3, flat, ...) or DSL file")
    c.add_argument("--point", required=True, help="comma-separated parameter coordinates")
    c.add_argument("--k", type=int)
    c.add_argument("--ambient", help="'standard <m>' or 'matrix <path>' for DSL targets")
    c.add_argument("--cluster-tol", type=float, default=CLUSTER_TOL)
    c.add_argument("--json", action="store_true", help="machine-readable output")

    v = sub.add_parser("verify", help="run the full check suite and write a report")
    v.add_argument("target")
    v.add_argument("--k", type=int)
    v.add_argument("--points", type=int, default=50)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--tol", action="append", default=[], metavar="CLASS=VALUE",
                   help="override a tolerance class (algebraic, first, second, hyp, jet, bracket)")
    v.add_argument("--fd-step", type=float, default=FD_STEP)
    v.add_argument("--format", choices=("json", "csv"), default="json")
    v.add_argument("--out", help="report path (default: standard output)")
    v.add_argument("--mutation", choices=sorted(MUTATIONS), help="inject a known fault to test detection")
    v.add_argument("--ambient")
    v.add_argument("--workers", type=int, help="override SLANTLAB_WORKERS")

    r = sub.add_parser("report", help="re-summarize a stored JSON report")
    r.add_argument("path")
    return p


def _cmd_list(out) -> int:
    for ident, desc in catalog.catalog_inventory():
        print(f"{ident:16s} {desc}", file=out)
    return 0


def _fmt_angle(theta: float) -> str:
    for label, val in (("0", 0.0), ("pi/2", math.pi / 2), ("pi/3", math.pi / 3), ("pi/4", math.pi / 4), ("pi/6", math.pi / 6)):
        if abs(theta - val) < 1e-9:
            return label
    return f"{theta:.12g}"


def _cmd_classify(args, out) -> int:
    fx, _ = resolve_target(args.target, args.k, args.ambient)
    x = _parse_point(args.point)
    if len(x) != fx.d:
        raise UsageError(f"{fx.name} takes {fx.d} parameters, got {len(x)}")
    if not fx.immersion.in_domain(x, 0.0):
        preds = ", ".join(str(p) for p in fx.immersion.domain)
        raise UsageError(f"point {args.point} violates the domain of {fx.name} ({preds})")
    info = classify(fx, x, args.cluster_tol)
    if args.json:
        print(json.dumps(info, sort_keys=True, indent=1), file=out)
        return 0
    print(f"target: {info['target']}  point: {args.point}", file=out)
    print(f"non-invariant distributions: {info['k']}" + ("  (ambiguous clustering)" if info["ambiguous"] else ""), file=out)
    for c in info["clusters"]:
        print(f"  theta = {_fmt_angle(c['angle']):>16s}  cos^2 = {c['cos2']:.12f}  x{c['multiplicity']}  {c['label']}", file=out)
    return 0


def _cmd_verify(args, out) -> int:
    cfg = RunConfig(
        args.target,
        points=args.points,
        seed=args.seed,
        tolerances=_parse_tol(args.tol),
        fd_step=args.fd_step,
        format=args.format,
        out=args.out,
        k=args.k,
        mutation=args.mutation,
        ambient=args.ambient,
    )
    if args.workers is not None and args.workers < 1:
        raise UsageError("--workers must be >= 1")
    report = run_suite(cfg.suite_config(), workers=args.workers)
    text = report.to_json() if cfg.format == "json" else report.to_csv()
    if cfg.out:
        Path(cfg.out).write_text(text, encoding="utf-8")
    else:
        out.write(text)
    _print_summary(report, sys.stderr)
    return report.exit_code


def _print_summary(report: SuiteReport, stream) -> None:
    s = report.summary
    counts = s["status_counts"]
    print(f"{report.target}: " + ", ".join(f"{k} {v}" for k, v in sorted(counts.items())), file=stream)
    failing = sorted(cid for cid, e in s["checks"].items() if e.get(FAIL))
    for cid in failing:
        e = s["checks"][cid]
        print(f"  FAIL {cid}: {e[FAIL]} points, max residual {e['max_residual']:.3e} (tol {e['tolerance']:.1e})", file=stream)
    for err in s.get("errors", []):
        print(f"  ERROR point {err['point_index']}: {err['error']}", file=stream)
    if s.get("all_ambiguous"):
        print("  every sampled point has an ambiguous slant clustering", file=stream)


def _cmd_report(args, out) -> int:
    report = load_report(args.path)
    extras = {k: v for k, v in report.summary.items() if k not in ("checks", "status_counts")}
    fresh = summarize(report.results, extras)
    if fresh != report.summary:
        print("warning: stored summary differs from one recomputed from the results", file=sys.stderr)
    report.summary = fresh
    print(f"target: {report.target}", file=out)
    print(f"points: {fresh.get('points')}  seed: {report.config.get('seed')}  fd_step: {report.config.get('fd_step')}", file=out)
    for cid, e in sorted(fresh["checks"].items()):
        print(f"  {cid:48s} max {e['max_residual']:.3e}  tol {e['tolerance']:.0e}  "
              f"pass {e['pass']}  fail {e['fail']}  hyp {e['hypothesis-not-met']}  amb {e['ambiguous']}", file=out)
    norms = fresh.get("hypothesis_norms", {})
    if norms:
        print("  hypothesis norms: " + ", ".join(f"|{k}| {v:.3e}" for k, v in sorted(norms.items())), file=out)
    for dist, st in sorted(fresh.get("slant_angles", {}).items()):
        print(f"  theta {dist}: mean {st['mean']:.12f} std {st['std']:.3e}", file=out)
    print("  multiplicity histogram: " + ", ".join(f"[{k}] {v}" for k, v in sorted(report.histogram.items())), file=out)
    return report.exit_code


def run_cli(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    handlers = {"list": lambda a: _cmd_list(out), "classify": lambda a: _cmd_classify(a, out),
                "verify": lambda a: _cmd_verify(a, out), "report": lambda a: _cmd_report(a, out)}
    try:
        return handlers[args.command](args)
    except (DomainViolation, ImmersionDegenerate, SpectrumError) as exc:
        print(f"slantlab {args.command}: {exc}", file=sys.stderr)
        return 1
    except (UsageError, FileNotFoundError, StructureError, KeyError, ValueError) as exc:
        # ValueError covers DSL syntax errors and malformed JSON reports
        print(f"slantlab {args.command}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run_cli())
