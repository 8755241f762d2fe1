"""Acceptance criteria, one test each. Every test records a PASS/FAIL line.

Run directly with ``python3 tests/test_acceptance.py`` or through pytest; the
lines are repeated in the pytest terminal summary.
"""

import filecmp
import sys
import time

import numpy as np
import pytest

from oracles import second_fundamental_form_oracle
from slantlab import catalog
from slantlab.cli import run_cli
from slantlab.connection_geometry import CovariantData
from slantlab.expr_dsl import eval_jet2
from slantlab.tangent_geometry import analyze_point
from slantlab.theorem_checks import FAIL, MUTATIONS, PASS, SuiteConfig, prepare_point, run_suite, sample_points

LINES: list[str] = []


def record(n: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    LINES.append(line)
    print(line)
    assert ok, line


def measured_angles(fx, z):
    """Cluster angle per distribution index, clusters matched to the frame subspaces."""
    pa = analyze_point(eval_jet2(fx.immersion, z), fx.ambient, z)
    E = pa.frame.tan_basis
    J = pa.frame.coord_basis
    out = {}
    for dist, cols in fx.distribution_fields.items():
        B, _ = np.linalg.qr(J[:, cols])
        gaps = [np.linalg.norm(B @ B.T - E @ c.projector @ E.T, 2) for c in pa.decomposition.clusters]
        out[dist] = pa.decomposition.clusters[int(np.argmin(gaps))].angle
    return out, pa.decomposition.ambiguous


@pytest.fixture(scope="module")
def reports():
    return {name: run_suite(SuiteConfig(name, points=50, seed=2024)) for name in ("pointwise:3", "kslant:3", "flat")}


def rows(report, pred):
    return [r for r in report.results if pred(r.check_id)]


def max_res(rs):
    return max(r.residual for r in rs)


def test_criterion_01_slant_function_reproduction():
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for k in (2, 3):
        fx = catalog.pointwise_example(k)
        for z in sample_points(fx, 100, seed=100 + k):
            ang, ambiguous = measured_angles(fx, z)
            assert not ambiguous
            for i, theta in ang.items():
                worst = max(worst, abs(theta - fx.expected_theta(i, z)))
            n += 1
    elapsed = time.perf_counter() - t0
    record(1, "pointwise slant functions", worst <= 1e-8 and elapsed < 10,
           f"{n} points, max |theta - formula| = {worst:.2e} (tol 1e-8), {elapsed:.2f}s (< 10s)")


def test_criterion_02_constant_angles():
    fx = catalog.kslant_example(3)
    pts = sample_points(fx, 100, seed=7)
    table = np.array([[measured_angles(fx, z)[0][i] for i in range(4)] for z in pts])
    expected = np.array([0.0, np.pi / 2, np.pi / 3, np.arccos(2 / 7)])
    err = float(np.max(np.abs(table - expected)))
    std = float(np.max(table.std(axis=0)))
    record(2, "k-slant constant angles", err <= 1e-9 and std <= 1e-9,
           f"100 points, max |theta - (0, pi/2, pi/3, arccos 2/7)| = {err:.2e}, max stddev = {std:.2e} (tol 1e-9)")


ALGEBRAIC = ("algebraic.T_skew", "algebraic.N_t_adjoint", "algebraic.n_skew", "algebraic.T_square",
             "algebraic.n_square", "algebraic.T_metric", "algebraic.N_metric")


def test_criterion_03_algebraic_identities(reports):
    worst, count, ok = 0.0, 0, True
    for name in ("pointwise:3", "kslant:3"):
        rs = rows(reports[name], lambda c: c in ALGEBRAIC)
        ok &= len(rs) == 7 * 50 and all(r.status == PASS for r in rs)
        worst, count = max(worst, max_res(rs)), count + len(rs)
    record(3, "algebraic identities (7, 20 random vectors each)", ok and worst <= 1e-8,
           f"{count} results on pointwise:3 and kslant:3, max residual {worst:.2e} (tol 1e-8)")


def test_criterion_04_structure_derivatives(reports):
    worst, ok = 0.0, True
    for name in ("pointwise:3", "kslant:3"):
        rs = rows(reports[name], lambda c: c.startswith("kahler.") and c != "kahler.weingarten")
        ok &= len(rs) == 4 * 50 and all(r.status == PASS for r in rs)
        worst = max(worst, max_res(rs))
    norms = reports["flat"].summary["hypothesis_norms"]
    flat = max(norms.values())
    record(4, "covariant derivatives of T, N, t, n", ok and worst <= 1e-6 and flat <= 1e-9,
           f"max residual {worst:.2e} over 50 points x 2 fixtures (tol 1e-6); "
           f"totally geodesic fixture max |nabla T,N,t,n| = {flat:.1e} (tol 1e-9)")


def test_criterion_05_gauss_weingarten(reports):
    worst_h = 0.0
    for name in ("pointwise:3", "kslant:3"):
        fx = catalog.resolve(name)
        for z in sample_points(fx, 10, seed=55):
            ctx = CovariantData.at(fx.immersion, fx.ambient, z)
            worst_h = max(worst_h, float(np.max(np.abs(ctx.hamb - second_fundamental_form_oracle(fx.immersion, z)))))
    dual = rows(reports["pointwise:3"], lambda c: c == "gauss.shape_duality") + \
        rows(reports["kslant:3"], lambda c: c == "gauss.shape_duality")
    worst_d = max_res(dual)
    record(5, "second fundamental form and shape operator", worst_h <= 1e-6 and worst_d <= 1e-10,
           f"|h - difference oracle| = {worst_h:.2e} (tol 1e-6, 20 points); "
           f"|g(h(X,Y),V) - g(A_V X,Y)| = {worst_d:.2e} (tol 1e-10, {len(dual)} points x 10 triples)")


def test_criterion_06_integrability(reports):
    parts = {}
    for name in ("pointwise:3", "kslant:3"):
        rep = reports[name]
        for key, pred in {
            "brackets": lambda c: c == "catalog.frame_brackets",
            "h_commutes_T": lambda c: c == "integrability.D0.h_commutes_T",
            "T_derivative_in_D": lambda c: c.startswith("integrability.") and c.endswith(".T_derivative_in_D"),
            "proof": lambda c: c.endswith(".T_bracket_identity") or c.endswith(".h_T_bracket_identity"),
        }.items():
            rs = rows(rep, pred)
            assert rs and all(r.status == PASS for r in rs), key
            parts[key] = max(parts.get(key, 0.0), max_res(rs))
    ok = parts["brackets"] <= 1e-12 and max(parts["h_commutes_T"], parts["T_derivative_in_D"], parts["proof"]) <= 1e-6
    record(6, "integrability evidence", ok,
           f"frame brackets {parts['brackets']:.1e} (tol 1e-12), h(X,TY) = h(TX,Y) on D0 {parts['h_commutes_T']:.1e}, "
           f"nabla T off D_i {parts['T_derivative_in_D']:.1e}, bracket identities {parts['proof']:.1e} (tol 1e-6)")


def test_criterion_07_codazzi(reports):
    worst = 0.0
    for name in ("pointwise:3", "kslant:3"):
        rs = rows(reports[name], lambda c: c == "codazzi.expansion")
        assert len(rs) >= 25 and all(r.status == PASS for r in rs)
        worst = max(worst, max_res(rs))
    fx = catalog.pointwise_example(2)
    z = np.array([0.3, 0.2, 0.5, 1.0, 0.0])  # (y2, y3) = (1, 0)
    pd = prepare_point(fx, z)
    deriv = float(pd.ctx.D_cos2[3, pd.dist_cluster[2]])
    record(7, "nabla T^2 expansion", worst <= 1e-5 and abs(deriv + 1 / 6) <= 1e-4,
           f"expansion residual {worst:.2e} over 50 points x 2 fixtures (tol 1e-5); "
           f"d(cos^2 theta_2)/dy2 at (1, 0) = {deriv:.10f} vs -1/6 (tol 1e-4)")


def test_criterion_08_mutations():
    details, ok = [], True
    for mutation, (check_id, target) in sorted(MUTATIONS.items()):
        rep = run_suite(SuiteConfig(target, points=20, seed=8, mutation=mutation), workers=1)
        rs = rows(rep, lambda c: c == check_id)
        caught = len(rs) == 20 and all(r.status == FAIL for r in rs)
        ok &= caught
        details.append(f"{mutation}->{check_id} {sum(r.status == FAIL for r in rs)}/20")
    record(8, "mutation sensitivity", ok, "; ".join(details))


def test_criterion_09_determinism(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    codes = [run_cli(["verify", "pointwise:2", "--points", "50", "--seed", "7", "--out", str(p)]) for p in (a, b)]
    same = filecmp.cmp(a, b, shallow=False)
    record(9, "byte-identical reports", same and codes == [0, 0],
           f"two runs of verify pointwise:2 --points 50 --seed 7: identical={same}, exit codes {codes}")


def test_criterion_10_full_suite_runtime():
    t0 = time.perf_counter()
    rep = run_suite(SuiteConfig("pointwise:3", points=200, seed=10))
    elapsed = time.perf_counter() - t0
    record(10, "full suite k = 3, 200 points", elapsed < 60 and rep.exit_code == 0,
           f"{elapsed:.1f}s (< 60s), {len(rep.results)} results, exit code {rep.exit_code}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
