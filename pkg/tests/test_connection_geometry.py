import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import christoffel_from_metric, fd_jacobian, immersion_value, second_fundamental_form_oracle
from slantlab import catalog
from slantlab.ambient import standard_structure
from slantlab.catalog import VectorFieldOnM
from slantlab.connection_geometry import (
    ClusterMatchError,
    CovariantData,
    Stencil,
    StencilError,
    ambient_field_derivative,
    covariant_tensor_derivative,
    lie_bracket,
    match_clusters,
    projected_normal_field,
    second_fundamental_form,
    shape_operator,
    tangential_connection,
)
from slantlab.expr_dsl import eval_jet2, parse_immersion
from slantlab.tangent_geometry import build_frame, detect_distributions
from slantlab.theorem_checks import kahler_residuals, sample_points

CIRCLE = parse_immersion("dim 1 -> 2\ncos(x1)\nsin(x1)\n")
SURFACE = parse_immersion("dim 2 -> 4\nx1\nx2\nx1*x2 + 0.5*x1^2\nsin(x2) - x1^3\n")


def frame_at(prog, x, m=None):
    jet = eval_jet2(prog, x)
    amb = standard_structure(m or prog.n_outputs // 2)
    return jet, build_frame(jet, amb, x)


def test_linear_immersion_is_totally_geodesic():
    prog = parse_immersion("dim 2 -> 4\nx1 + x2\nx2\n2*x1\n0\n")
    jet, frame = frame_at(prog, [0.1, 0.2])
    assert np.array_equal(second_fundamental_form(jet, frame).components, np.zeros((2, 2, 2)))
    assert np.allclose(tangential_connection(jet, frame).gamma, 0)
    sff = second_fundamental_form(jet, frame)
    assert np.array_equal(shape_operator(sff, frame, [1.0, -2.0]), np.zeros((2, 2)))


@pytest.mark.parametrize("x", [0.0, 0.7, 2.5])
def test_unit_circle_curvature(x):
    jet, frame = frame_at(CIRCLE, [x])
    sff = second_fundamental_form(jet, frame)
    assert np.linalg.norm(sff.components) == pytest.approx(1.0, abs=1e-14)
    inward = -np.array([np.cos(x), np.sin(x)])
    A = shape_operator(sff, frame, frame.nor_basis.T @ inward)
    assert A == pytest.approx(np.array([[1.0]]), abs=1e-14)


def test_graph_vertex_has_no_tangential_acceleration():
    jet, frame = frame_at(parse_immersion("dim 1 -> 2\nx1\n0.5*x1^2\n"), [0.0])
    assert tangential_connection(jet, frame).gamma[0, 0, 0] == 0.0


@pytest.mark.parametrize("prog,x", [
    (catalog.pointwise_example(2).immersion, [0.3, 0.2, 0.5, 0.1, -0.2]),
    (catalog.kslant_example(3).immersion, [0.2, 0.4, -0.3, 0.1, 0.2, -0.1, 0.3]),
    (SURFACE, [0.3, -0.4]),
])
def test_second_fundamental_form_matches_oracle(prog, x):
    jet, frame = frame_at(prog, x)
    ctx = CovariantData.at(prog, standard_structure(prog.n_outputs // 2), x)
    assert np.max(np.abs(ctx.hamb - second_fundamental_form_oracle(prog, np.array(x)))) <= 1e-6
    sff = second_fundamental_form(jet, frame)
    amb = np.einsum("ij,jab->iab", frame.nor_basis, sff.components)
    assert np.max(np.abs(amb - ctx.hamb)) <= 1e-13


@pytest.mark.parametrize("prog,x", [
    (catalog.pointwise_example(2).immersion, [0.3, 0.2, 0.5, 0.1, -0.2]),
    (SURFACE, [0.3, -0.4]),
])
def test_christoffels_match_metric_formula(prog, x):
    jet, frame = frame_at(prog, x)
    gamma = tangential_connection(jet, frame).gamma
    assert np.max(np.abs(gamma - christoffel_from_metric(prog, np.array(x)))) <= 1e-6


def test_gauss_split_and_shape_duality():
    ctx = CovariantData.at(SURFACE, standard_structure(2), [0.3, -0.4])
    g = ctx.geom
    recon = np.einsum("ic,cab->iab", g.J, ctx.christoffels.gamma) + ctx.hamb
    assert np.max(np.abs(g.jet.hessian - recon)) <= 1e-9
    rng = np.random.default_rng(0)
    sff = second_fundamental_form(g.jet, g.frame)
    E = g.frame.tan_basis
    for _ in range(10):
        X, Y = g.PT @ rng.standard_normal(4), g.PT @ rng.standard_normal(4)
        V = g.PN @ rng.standard_normal(4)
        assert ctx.h(X, Y) @ V == pytest.approx((ctx.A(V) @ X) @ Y, abs=1e-10)
        # frame-coordinate shape operator agrees with the ambient one
        A_frame = shape_operator(sff, g.frame, g.frame.nor_basis.T @ V)
        assert np.allclose(E @ A_frame @ E.T, ctx.A(V), atol=1e-10)


def test_ill_conditioned_basis_warns():
    prog = parse_immersion("dim 2 -> 4\n100*x1\n1e-7*x2\n0\n0\n")
    with pytest.warns(RuntimeWarning, match="ill-conditioned"):
        CovariantData.at(prog, standard_structure(2), [0.1, 0.2])


def test_field_derivatives():
    x = np.array([0.3, -0.4])
    const = ambient_field_derivative(lambda p: np.array([1.0, 2.0]), 0, x)
    assert np.array_equal(const.value, [0.0, 0.0])
    J = eval_jet2(SURFACE, x).jacobian
    for a in range(2):
        d = ambient_field_derivative(lambda p: SURFACE(p), a, x)
        assert np.max(np.abs(d.value - J[:, a])) <= 1e-9
        assert not d.one_sided


def test_one_sided_fallback_near_domain_edge():
    def guarded(p):
        if p[0] <= 0:
            raise ValueError("outside")
        return np.array([np.exp(p[0])])

    x = np.array([4e-6])
    d = ambient_field_derivative(guarded, 0, x)
    assert d.one_sided
    assert d.value[0] == pytest.approx(np.exp(4e-6), abs=1e-9)
    with pytest.raises(StencilError):
        ambient_field_derivative(guarded, 0, np.array([-1.0]))


def test_stencil_one_sided_when_nodes_leave_the_domain():
    prog = parse_immersion("dim 2 -> 4\nx1\nx2\nsqrt(x1)\nx2^2\n")
    st_ = Stencil(prog, standard_structure(2), [6e-6, 0.3])
    assert st_.one_sided == [0]
    d = st_.derivative(lambda g: g.J[:, 0], 0)
    assert np.isfinite(d).all()


def test_lie_brackets():
    d = 2
    d1 = VectorFieldOnM.coordinate(0, d)
    x1d2 = VectorFieldOnM.from_sources(["0", "x1"], d)
    x = np.array([0.4, -0.2])
    assert np.array_equal(lie_bracket(d1, VectorFieldOnM.coordinate(1, d), x), [0.0, 0.0])
    assert np.array_equal(lie_bracket(d1, x1d2, x), [0.0, 1.0])
    fx = catalog.pointwise_example(2)
    assert np.array_equal(lie_bracket(fx.frames[3], fx.frames[4], [0.3, 0.2, 0.5, 1.0, 0.0]), np.zeros(5))


poly_coeffs = st.lists(st.integers(-3, 3), min_size=3, max_size=3)


def poly_field(c1, c2):
    src = [f"{c1[0]} + {c1[1]}*x1*x2 + {c1[2]}*x2^2", f"{c2[0]}*x1 + {c2[1]}*sin(x2) + {c2[2]}*x1^2"]
    return VectorFieldOnM.from_sources(src, 2)


@settings(max_examples=30, deadline=None)
@given(poly_coeffs, poly_coeffs, poly_coeffs, poly_coeffs)
def test_bracket_matches_difference_oracle(a, b, c, e):
    X, Y = poly_field(a, b), poly_field(c, e)
    x = np.array([0.3, -0.2])
    DX = fd_jacobian(X.value, x)
    DY = fd_jacobian(Y.value, x)
    oracle = DY @ X.value(x) - DX @ Y.value(x)
    assert np.max(np.abs(lie_bracket(X, Y, x) - oracle)) <= 1e-7


@settings(max_examples=20, deadline=None)
@given(poly_coeffs, poly_coeffs, poly_coeffs, poly_coeffs)
def test_connection_is_torsion_free_and_metric(a, b, c, e):
    x = np.array([0.3, -0.4])
    ctx = CovariantData.at(SURFACE, standard_structure(2), x)
    X, Y, Z = poly_field(a, b), poly_field(c, e), poly_field(b, c)
    J = ctx.geom.J
    nXY = ctx.connection(X.value(x), Y.value(x), Y.jacobian(x))
    nYX = ctx.connection(Y.value(x), X.value(x), X.jacobian(x))
    assert np.max(np.abs(nXY - nYX - J @ lie_bracket(X, Y, x))) <= 1e-8
    # X g(Y, Z) = g(nabla_X Y, Z) + g(Y, nabla_X Z)
    gYZ = lambda p: np.array([Y.value(p) @ (eval_jet2(SURFACE, p).jacobian.T @ eval_jet2(SURFACE, p).jacobian) @ Z.value(p)])
    lhs = fd_jacobian(gYZ, x)[0] @ X.value(x)
    nXZ = ctx.connection(X.value(x), Z.value(x), Z.jacobian(x))
    rhs = nXY @ (J @ Z.value(x)) + (J @ Y.value(x)) @ nXZ
    assert lhs == pytest.approx(rhs, abs=1e-5)


def test_weingarten_consistency():
    fx = catalog.kslant_example(2)
    ctx = CovariantData.at(fx.immersion, fx.ambient, [0.3, 0.2, 0.5, 0.1, -0.2])
    g = ctx.geom
    for i in range(0, g.J.shape[0], 3):
        V = projected_normal_field(np.eye(g.J.shape[0])[i])
        for a in range(g.J.shape[1]):
            dV = ctx.stencil.derivative(V, a)
            assert np.max(np.abs(g.PT @ dV + ctx.A(V(g)) @ g.J[:, a])) <= 1e-6


@pytest.mark.parametrize("name", ["pointwise:2", "kslant:3"])
def test_kahler_identities_on_catalog(name):
    fx = catalog.resolve(name)
    for x in sample_points(fx, 5, seed=11):
        res = kahler_residuals(CovariantData.at(fx.immersion, fx.ambient, x))
        assert max(res.values()) <= 1e-6, res


@pytest.mark.parametrize("name", ["flat", "flatslant"])
def test_totally_geodesic_fixtures_have_parallel_blocks(name):
    fx = catalog.resolve(name)
    ctx = CovariantData.at(fx.immersion, fx.ambient, [0.1, 0.2, -0.3, 0.05])
    assert max(ctx.tensor_norms().values()) <= 1e-9
    assert np.max(np.abs(ctx.nabla_T2)) <= 1e-9


def test_generic_tensor_derivative_is_tensorial():
    fx = catalog.pointwise_example(2)
    x = np.array([0.3, 0.2, 0.5, 0.1, -0.2])
    ctx = CovariantData.at(fx.immersion, fx.ambient, x)
    d = fx.d
    for a, b in [(0, 2), (3, 4), (2, 1)]:
        Xa, Yb = VectorFieldOnM.coordinate(a, d), VectorFieldOnM.coordinate(b, d)
        assert np.allclose(covariant_tensor_derivative("T", Xa, Yb, ctx), ctx.nabla_T[a, :, b], atol=1e-9)
        assert np.allclose(covariant_tensor_derivative("N", Xa, Yb, ctx), ctx.nabla_N[a, :, b], atol=1e-9)
        # (nabla_X T)(f Y) = f (nabla_X T) Y for the coefficient f = x1 + 2
        src = ["x1 + 2" if c == b else "0" for c in range(d)]
        fY = VectorFieldOnM.from_sources(src, d)
        for op in ("T", "N", "T2"):
            lhs = covariant_tensor_derivative(op, Xa, fY, ctx)
            rhs = (x[0] + 2) * covariant_tensor_derivative(op, Xa, Yb, ctx)
            assert np.max(np.abs(lhs - rhs)) <= 1e-7
    V = projected_normal_field(np.eye(12)[5])
    X0 = VectorFieldOnM.coordinate(0, d)
    for op, ref in (("t", ctx.nabla_t), ("n", ctx.nabla_n)):
        assert np.allclose(covariant_tensor_derivative(op, X0, V, ctx), ref[0][:, 5], atol=1e-10)


def test_cluster_matching_failures():
    fx = catalog.pointwise_example(2)
    x = [0.3, 0.2, 0.5, 0.1, -0.2]
    dec = CovariantData.at(fx.immersion, fx.ambient, x).decomposition
    assert match_clusters(dec, dec) == [0, 1, 2]
    jet, frame = frame_at(catalog.flat_invariant_fixture().immersion, [0.1, 0.2, 0.3, 0.4])
    from slantlab.tangent_geometry import split_phi

    other = detect_distributions(split_phi(frame, standard_structure(3)))
    with pytest.raises(ClusterMatchError):
        match_clusters(dec, other)


def test_position_field_oracle_independent_of_jets():
    prog = catalog.kslant_example(2).immersion
    x = np.array([0.3, 0.2, 0.5, 0.1, -0.2])
    J = eval_jet2(prog, x).jacobian
    assert np.max(np.abs(fd_jacobian(lambda p: immersion_value(prog, p), x) - J)) <= 1e-9


def test_no_warning_on_regular_point():
    fx = catalog.kslant_example(2)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        CovariantData.at(fx.immersion, fx.ambient, [0.3, 0.2, 0.5, 0.1, -0.2])
