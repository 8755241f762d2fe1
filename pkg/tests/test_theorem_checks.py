import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slantlab import catalog, parse_immersion
from slantlab.tangent_geometry import SlantDecomposition
from slantlab.theorem_checks import (
    AMBIGUOUS,
    FAIL,
    HYP,
    MUTATIONS,
    PASS,
    CheckResult,
    SuiteConfig,
    SuiteReport,
    Tolerances,
    check_algebraic,
    check_codazzi_expansion,
    check_integrability,
    check_kahler_identities,
    check_parallel_conditionals,
    classify,
    gate_parallel,
    prepare_point,
    resolve_target,
    run_suite,
    sample_points,
    summarize,
)

UNCONDITIONAL = ("algebraic.", "kahler.", "codazzi.expansion", "h_T_bracket_identity", "T_bracket_identity", "gauss.")


@pytest.fixture(scope="module")
def pointwise_report():
    return run_suite(SuiteConfig("pointwise:2", points=12, seed=5), workers=1)


def test_every_unconditional_identity_passes(pointwise_report):
    rows = [r for r in pointwise_report.results if any(t in r.check_id for t in UNCONDITIONAL)]
    assert rows and all(r.status == PASS for r in rows)
    assert pointwise_report.exit_code == 0


def test_catalog_parallel_hypotheses_not_met(pointwise_report):
    par = [r for r in pointwise_report.results if r.check_id.startswith("parallel.")]
    assert par and {r.status for r in par} == {HYP}
    assert pointwise_report.summary["hypothesis_norms"]["nabla_T"] > 1e-3


def test_results_sorted_and_summary_recomputable(pointwise_report):
    keys = [(r.check_id, r.point_index) for r in pointwise_report.results]
    assert keys == sorted(keys)
    extras = {k: v for k, v in pointwise_report.summary.items() if k not in ("checks", "status_counts")}
    assert summarize(pointwise_report.results, extras) == pointwise_report.summary


def test_json_round_trip(pointwise_report, tmp_path):
    text = pointwise_report.to_json()
    data = json.loads(text)
    assert set(data) == {"config", "results", "summary", "histogram"}
    assert set(data["results"][0]) == {"check_id", "point_index", "point", "residual", "tolerance", "status"}
    again = SuiteReport.from_dict(data)
    assert again.to_json() == text
    assert data["histogram"] == {"2,2,1": 12}


def test_csv_layout(pointwise_report):
    lines = pointwise_report.to_csv().splitlines()
    assert lines[0] == "check_id,point_index,residual,tolerance,status"
    assert len(lines) == len(pointwise_report.results) + 1


def test_worker_pool_matches_serial():
    cfg = SuiteConfig("kslant:2", points=4, seed=2)
    assert run_suite(cfg, workers=2).to_json() == run_suite(cfg, workers=1).to_json()


def test_totally_geodesic_fixture_passes_parallel_checks():
    rep = run_suite(SuiteConfig("flat", points=5, seed=1), workers=1)
    par = [r for r in rep.results if r.check_id.startswith("parallel.")]
    assert par and all(r.status == PASS and r.residual == 0.0 for r in par)
    assert max(rep.summary["hypothesis_norms"].values()) <= 1e-9


@pytest.mark.parametrize("mutation", sorted(MUTATIONS))
def test_mutations_are_detected(mutation):
    check_id, target = MUTATIONS[mutation]
    rep = run_suite(SuiteConfig(target, points=6, seed=9, mutation=mutation), workers=1)
    rows = [r for r in rep.results if r.check_id == check_id]
    assert len(rows) == 6 and all(r.status == FAIL for r in rows)
    assert rep.exit_code == 1


def test_phi_corruption_blows_up_square_identity():
    fx = catalog.pointwise_example(3)
    pd = prepare_point(fx, sample_points(fx, 1, 0)[0])
    res = {r.check_id: r for r in check_algebraic(pd, mutation="phi_sign_flip")}
    assert res["algebraic.T_square"].residual > 1e-3


def test_individual_check_families():
    fx = catalog.kslant_example(3)
    pd = prepare_point(fx, sample_points(fx, 1, 4)[0], index=0)
    assert len(check_algebraic(pd)) == 9
    assert {r.status for r in check_kahler_identities(pd)} == {PASS}
    assert check_integrability(pd, 1) == []  # one-dimensional
    d0 = {r.check_id: r.status for r in check_integrability(pd, 0)}
    assert d0["integrability.D0.h_commutes_T"] == PASS and d0["integrability.D0.h_T_bracket_identity"] == PASS
    cz = {r.check_id: r for r in check_codazzi_expansion(pd)}
    assert cz["codazzi.constant_angle"].residual <= 1e-6 and cz["codazzi.nabla_T2_symmetry"].status == PASS
    assert {r.status for r in check_parallel_conditionals(pd)} == {HYP}


def test_gating_never_emits_verdicts_above_hypothesis_tolerance():
    rows = [CheckResult("parallel.nabla_T.shape_symmetry", 0, (0.0,), 0.0, 1e-6, PASS),
            CheckResult("parallel.nabla_N.h_commutes_T", 0, (0.0,), 5.0, 1e-6, FAIL)]
    gated = gate_parallel(rows, {"T": 1e-3, "N": 1e-8}, 1e-6)
    assert [r.status for r in gated] == [HYP, FAIL]
    gated = gate_parallel(rows, {"T": 0.0, "N": 1e-8}, 1e-6, ambiguous=True)
    assert [r.status for r in gated] == [PASS, FAIL]


def test_ambiguous_points_are_marked():
    fx = catalog.custom_fixture(parse_immersion("dim 4 -> 8\nx1\nx2\nx3\n0\n0\n0\nx4\n0\n"))
    pd = prepare_point(fx, [0.1, 0.2, 0.3, 0.4])
    assert not pd.ambiguous
    dec = pd.ctx.decomposition
    # replace the cached decomposition by a flagged copy
    pd.ctx.geom.__dict__["decomposition"] = SlantDecomposition(dec.clusters, dec.H_projector, True, 0.0)
    assert {r.status for r in check_codazzi_expansion(pd)} == {AMBIGUOUS}
    assert {r.status for r in check_kahler_identities(pd)} == {PASS}


def test_custom_file_target(tmp_path):
    path = tmp_path / "line.dsl"
    path.write_text("dim 1 -> 2\nx1\n0\n")
    fx, ident = resolve_target(str(path))
    assert ident.startswith("sha256:")
    info = classify(fx, [0.2])
    assert info["k"] == 1 and info["clusters"][0]["label"] == "anti-invariant"
    with pytest.raises(FileNotFoundError):
        resolve_target(str(tmp_path / "nope.dsl"))


def test_custom_surface_uses_projected_spanning_fields(tmp_path):
    path = tmp_path / "surface.dsl"
    path.write_text("dim 2 -> 4\nx1\nx2\nx1*x2\nsin(x1)\n")
    rep = run_suite(SuiteConfig(str(path), points=4, seed=0), workers=1)
    assert rep.n_fail == 0
    assert any(r.check_id.startswith("kahler.") for r in rep.results)


def test_config_validation():
    with pytest.raises(ValueError):
        SuiteConfig("flat", points=0)
    with pytest.raises(ValueError):
        SuiteConfig("flat", fd_step=1e-9)
    with pytest.raises(ValueError):
        SuiteConfig("flat", mutation="nope")
    with pytest.raises(ValueError):
        Tolerances().with_overrides({"algebraic": -1.0})
    with pytest.raises(ValueError):
        Tolerances().with_overrides({"bogus": 1.0})


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 20))
def test_samples_are_admissible_and_reproducible(seed, n):
    fx = catalog.pointwise_example(2)
    a = sample_points(fx, n, seed, margin=0.05)
    assert np.array_equal(a, sample_points(fx, n, seed, margin=0.05))
    assert a.shape == (n, 5)
    assert all(fx.immersion.in_domain(x, 0.05) for x in a)
