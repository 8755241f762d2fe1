"""Geometric identity checks at sampled points, aggregated into a report.

Check families and their default tolerance class:

* algebraic (1e-8): skew-adjointness of T, n and the N/t duality; the
  spectral forms of T^2 and n^2; the metric identities for T and N; T keeps
  each distribution; slant angle constant inside a distribution.
* kahler (1e-6): the four covariant-derivative formulas for T, N, t, n and a
  Weingarten cross-check.
* integrability (1e-6): bracket closure, the three characterizations, and the
  two unconditional identities used in their proofs.
* codazzi (1e-5): the expansion of nabla T^2 and, on catalog fixtures, the
  behaviour of X(cos^2 theta_i).
* parallel (1e-6): consequences of nabla T = 0 and nabla N = 0, gated on the
  measured size of nabla T and nabla N over the whole sample.

Unconditional identities must pass at every non-ambiguous point. Conditional
ones report ``hypothesis-not-met`` when their hypothesis fails.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import catalog
from .ambient import parse_ambient, validate_structure
from .catalog import ExampleFixture, VectorFieldOnM
from .connection_geometry import (
    FD_STEP,
    ClusterMatchError,
    CovariantData,
    LocalGeometry,
    Stencil,
    StencilError,
    lie_bracket,
)
from .expr_dsl import Const, DomainViolation, Neg, load_immersion
from .tangent_geometry import CLUSTER_TOL, ImmersionDegenerate, SpectrumError, slant_angle

PASS, FAIL, HYP, AMBIGUOUS = "pass", "fail", "hypothesis-not-met", "ambiguous"

MUTATIONS = {
    # name: (targeted check id prefix, fixture it is meant for)
    "phi_sign_flip": ("algebraic.T_square", "pointwise:2"),
    "drop_h_term": ("kahler.nabla_T", "pointwise:2"),
    "drop_shape_term": ("integrability.D2.T_bracket_identity", "pointwise:2"),
    "wrong_projector": ("codazzi.expansion", "pointwise:2"),
    "h_T_corrupt": ("parallel.nabla_N.h_commutes_T", "flat"),
}


@dataclass(frozen=True)
class Tolerances:
    algebraic: float = 1e-8
    first: float = 1e-6
    second: float = 1e-5
    hyp: float = 1e-6
    jet: float = 1e-10
    bracket: float = 1e-12

    def with_overrides(self, overrides: dict[str, float]) -> "Tolerances":
        bad = set(overrides) - set(asdict(self))
        if bad:
            raise ValueError(f"unknown tolerance classes: {sorted(bad)}")
        for k, v in overrides.items():
            if not v > 0:
                raise ValueError(f"tolerance {k} must be positive")
        return replace(self, **overrides)


@dataclass(frozen=True)
class CheckResult:
    check_id: str
    point_index: int
    point: tuple[float, ...]
    residual: float
    tolerance: float
    status: str

    def to_dict(self) -> dict:
        return {
            "check_id": self.check_id,
            "point_index": self.point_index,
            "point": list(self.point),
            "residual": self.residual,
            "tolerance": self.tolerance,
            "status": self.status,
        }


def _status(residual: float, tol: float) -> str:
    return PASS if residual <= tol else FAIL


# --- point data ---------------------------------------------------------------


class ProjectedField:
    """Spanning field of a detected distribution: P_i applied to a coordinate field."""

    def __init__(self, stencil: Stencil, cluster: int, a: int):
        self.stencil, self.cluster, self.a = stencil, cluster, a

    def coeffs(self, geom: LocalGeometry) -> np.ndarray:
        idx = self.stencil.matched(geom)[self.cluster]
        E = geom.frame.tan_basis
        P = geom.decomposition.clusters[idx].projector
        return geom.L @ (E @ (P @ (E.T @ geom.J[:, self.a])))


def _is_constant(f) -> bool:
    return isinstance(f, VectorFieldOnM) and all(
        all(isinstance(t, Const) or (isinstance(t, Neg) and isinstance(t.arg, Const)) for t in p.outputs)
        for p in f.coefficients
    )


class _Field:
    """Uniform access to a tangent field at the center and on the stencil."""

    def __init__(self, f, ctx: CovariantData):
        self.f = f
        self.ctx = ctx
        self.constant = _is_constant(f)
        x = ctx.x
        if isinstance(f, VectorFieldOnM):
            self.c = f.value(x)
            self.D = f.jacobian(x)
        else:
            self.c = f.coeffs(ctx.geom)
            self.D = ctx.stencil.gradient(f.coeffs).T  # [c, a]

    def coeffs(self, geom: LocalGeometry) -> np.ndarray:
        if self.constant or geom is self.ctx.geom:
            return self.c
        if isinstance(self.f, VectorFieldOnM):
            return self.f.value(geom.params)
        return self.f.coeffs(geom)

    def bracket_with(self, other: "_Field") -> np.ndarray:
        if isinstance(self.f, VectorFieldOnM) and isinstance(other.f, VectorFieldOnM):
            return lie_bracket(self.f, other.f, self.ctx.x)
        return other.D @ self.c - self.D @ other.c


@dataclass
class PointData:
    index: int
    params: np.ndarray
    ctx: CovariantData
    fixture: ExampleFixture
    dist_cluster: dict[int, int]  # distribution index -> cluster index
    dist_fields: dict[int, list]  # distribution index -> spanning fields
    assignment_residual: float | None = None
    seed: int = 0

    @property
    def ambiguous(self) -> bool:
        return self.ctx.decomposition.ambiguous

    @property
    def point(self) -> tuple[float, ...]:
        return tuple(float(v) for v in self.params)

    def rng(self, tag: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, self.index, tag])

    def result(self, check_id: str, residual: float, tol: float, status: str | None = None) -> CheckResult:
        residual = float(residual)
        if status is None:
            status = _status(residual, tol)
        return CheckResult(check_id, self.index, self.point, residual, float(tol), status)

    def ambient_projector(self, cluster: int) -> np.ndarray:
        E = self.ctx.frame.tan_basis
        return E @ self.ctx.decomposition.clusters[cluster].projector @ E.T


def _subspace_gap(P1: np.ndarray, P2: np.ndarray) -> float:
    """Spectral norm of P1 - P2: sine of the largest principal angle for equal ranks."""
    return float(np.linalg.norm(P1 - P2, 2))


def prepare_point(fixture: ExampleFixture, x, index: int = 0, step: float = FD_STEP,
                  cluster_tol: float = CLUSTER_TOL, seed: int = 0) -> PointData:
    ctx = CovariantData.at(fixture.immersion, fixture.ambient, x, step, cluster_tol)
    dec = ctx.decomposition
    dist_cluster: dict[int, int] = {}
    dist_fields: dict[int, list] = {}
    residual = None
    if fixture.expected_assignment:
        J = ctx.geom.J
        gaps = []
        for dist, cols in fixture.distribution_fields.items():
            B, _ = np.linalg.qr(J[:, cols])
            Pexp = B @ B.T
            cands = [(_subspace_gap(Pexp, _amb(ctx, j)), j) for j in range(len(dec.clusters))]
            gap, j = min(cands)
            gaps.append(gap)
            dist_cluster[dist] = j
            dist_fields[dist] = [fixture.frames[c] for c in cols]
        residual = max(gaps)
    else:
        # detected clusters are the distributions; D0 is the invariant one if present
        nxt = 1
        for j, c in enumerate(dec.clusters):
            dist = 0 if c.invariant else nxt
            nxt += 0 if c.invariant else 1
            dist_cluster[dist] = j
            dist_fields[dist] = [ProjectedField(ctx.stencil, j, a) for a in _spanning_columns(ctx, j)]
    return PointData(index, np.asarray(x, dtype=float), ctx, fixture, dist_cluster, dist_fields, residual, seed)


def _amb(ctx: CovariantData, j: int) -> np.ndarray:
    E = ctx.frame.tan_basis
    return E @ ctx.decomposition.clusters[j].projector @ E.T


def _spanning_columns(ctx: CovariantData, j: int) -> list[int]:
    """Coordinate directions whose projections onto cluster j are most independent (pivoted)."""
    P = _amb(ctx, j)
    W = P @ ctx.geom.J
    chosen: list[int] = []
    mult = ctx.decomposition.clusters[j].multiplicity
    R = W.copy()
    for _ in range(mult):
        norms = np.linalg.norm(R, axis=0)
        norms[chosen] = -1.0
        a = int(np.argmax(norms))
        chosen.append(a)
        q = R[:, a] / np.linalg.norm(R[:, a])
        R = R - np.outer(q, q @ R)
    return sorted(chosen)


# --- algebraic identities ------------------------------------------------------


def _corrupt_phi(phi: np.ndarray) -> np.ndarray:
    bad = phi.copy()
    bad[0, 1] = -bad[0, 1]
    return bad


def check_algebraic(pd: PointData, tol: Tolerances = Tolerances(), n_args: int = 20,
                    mutation: str | None = None) -> list[CheckResult]:
    ctx = pd.ctx
    split = ctx.split
    if mutation == "phi_sign_flip":
        from .tangent_geometry import PhiSplit

        E_T, E_N = ctx.frame.tan_basis, ctx.frame.nor_basis
        phi = _corrupt_phi(ctx.geom.phi)
        split = PhiSplit(E_T.T @ phi @ E_T, E_N.T @ phi @ E_T, E_T.T @ phi @ E_N, E_N.T @ phi @ E_N)
    T, N, t, n = split.T, split.N, split.t, split.n
    dec = ctx.decomposition
    d, r = T.shape[0], n.shape[0]
    rng = pd.rng(1)
    X = rng.standard_normal((d, n_args))
    Y = rng.standard_normal((d, n_args))
    V = rng.standard_normal((r, n_args))
    W = rng.standard_normal((r, n_args))

    def dot(a, b):
        return np.sum(a * b, axis=0)

    c = np.array([cl.eigenvalue for cl in dec.clusters])
    P = [cl.projector for cl in dec.clusters]
    T2_model = -sum(ci * Pi for ci, Pi in zip(c, P))
    n2_model = -dec.H_projector - sum(
        cl.eigenvalue * cl.normal_projector for cl in dec.clusters if cl.normal_projector is not None
    )
    cos_form = sum(ci * dot(Pi @ X, Pi @ Y) for ci, Pi in zip(c, P))
    sin_form = sum((1 - ci) * dot(Pi @ X, Pi @ Y) for ci, Pi in zip(c, P))
    a = tol.algebraic
    unconditional = [
        ("algebraic.T_skew", np.max(np.abs(dot(T @ X, Y) + dot(X, T @ Y)))),
        ("algebraic.N_t_adjoint", np.max(np.abs(dot(N @ X, V) + dot(X, t @ V)))),
        ("algebraic.n_skew", np.max(np.abs(dot(n @ V, W) + dot(V, n @ W)))),
    ]
    spectral = [
        ("algebraic.T_square", np.max(np.abs((T @ T - T2_model) @ X))),
        ("algebraic.n_square", np.max(np.abs((n @ n - n2_model) @ V))),
        ("algebraic.T_metric", np.max(np.abs(dot(T @ X, T @ Y) - cos_form))),
        ("algebraic.N_metric", np.max(np.abs(dot(N @ X, N @ Y) - sin_form))),
    ]
    preserve = 0.0
    for i, Pi in enumerate(P):
        for j, Pj in enumerate(P):
            if i != j:
                preserve = max(preserve, float(np.linalg.norm(Pj @ T @ Pi, 2)))
    spectral.append(("definition.T_preserves_distributions", preserve))
    const = 0.0
    for cl in dec.clusters:
        for v in (cl.basis @ rng.standard_normal((cl.multiplicity, 4))).T:
            const = max(const, abs(slant_angle(split, v) - cl.angle))
    spectral.append(("slant.pointwise_constancy", const))
    out = [pd.result(cid, res, a) for cid, res in unconditional]
    for cid, res in spectral:
        out.append(pd.result(cid, res, a, AMBIGUOUS if pd.ambiguous else None))
    return out


def check_catalog(pd: PointData, tol: Tolerances = Tolerances()) -> list[CheckResult]:
    """Fixture-specific facts: frame fields, bracket vanishing, assignment, slant formula."""
    fx = pd.fixture
    out: list[CheckResult] = []
    if not fx.expected_assignment:
        return out
    status = AMBIGUOUS if pd.ambiguous else None
    out.append(pd.result("catalog.assignment", pd.assignment_residual, tol.algebraic, status))
    if fx.kind in catalog.KINDS:
        X = catalog.frame_vectors(fx.kind, fx.k, pd.params)
        out.append(pd.result("catalog.frame_vectors", np.max(np.abs(pd.ctx.geom.J - X)), tol.bracket))
        G = X.T @ X
        out.append(pd.result("catalog.frame_orthogonality", np.max(np.abs(G - np.diag(np.diag(G)))), tol.jet))
    frames = fx.frames
    worst = 0.0
    for i in range(len(frames)):
        for j in range(i + 1, len(frames)):
            worst = max(worst, float(np.max(np.abs(lie_bracket(frames[i], frames[j], pd.params)))))
    out.append(pd.result("catalog.frame_brackets", worst, tol.bracket))
    if fx.kind in catalog.KINDS:
        dec = pd.ctx.decomposition
        err = 0.0
        for dist, j in pd.dist_cluster.items():
            err = max(err, abs(dec.clusters[j].angle - fx.expected_theta(dist, pd.params)))
        out.append(pd.result("slant.angle_formula", err, tol.algebraic, status))
    return out


# --- derivatives of T, N, t, n -----------------------------------------------


def kahler_residuals(ctx: CovariantData, mutation: str | None = None) -> dict[str, float]:
    g = ctx.geom
    phi, PT, PN, J = g.phi, g.PT, g.PN, g.J
    K, hamb = ctx.K, ctx.hamb
    TJ, NJ = PT @ phi @ J, PN @ phi @ J
    tN, nN = PT @ phi @ PN, PN @ phi @ PN

    # (i)  (nabla_X T)Y = A_{NY}X + t h(X,Y)
    A_NY_X = np.einsum("ib,iaq->aqb", NJ, K)
    th = np.einsum("ij,jab->aib", PT @ phi, hamb)
    rhs_i = A_NY_X if mutation == "drop_h_term" else A_NY_X + th
    # (ii) (nabla_X N)Y = -h(X,TY) + n h(X,Y)
    rhs_ii = -np.einsum("iaq,qb->aib", K, TJ) + np.einsum("ij,jab->aib", PN @ phi, hamb)
    # (iii) (nabla_X t)V = A_{nV}X - T(A_V X), V = P_N e_j
    A_V_X = np.einsum("ij,iaq->aqj", PN, K)
    rhs_iii = np.einsum("ij,iaq->aqj", nN, K) - np.einsum("pq,aqj->apj", PT @ phi, A_V_X)
    # (iv) (nabla_X n)V = -h(X,tV) - N(A_V X)
    rhs_iv = -np.einsum("iaq,qj->aij", K, tN) - np.einsum("pq,aqj->apj", PN @ phi, A_V_X)
    # Weingarten: tangential derivative of V_j equals -A_{V_j} d_a
    weing = np.einsum("ij,ajk->aik", PT, ctx.D_PN) + A_V_X

    def worst(arr):
        return float(np.max(np.linalg.norm(arr, axis=1))) if arr.size else 0.0

    return {
        "kahler.nabla_T": worst(ctx.nabla_T - rhs_i),
        "kahler.nabla_N": worst(ctx.nabla_N - rhs_ii),
        "kahler.nabla_t": worst(ctx.nabla_t - rhs_iii),
        "kahler.nabla_n": worst(ctx.nabla_n - rhs_iv),
        "kahler.weingarten": worst(weing),
    }


def check_kahler_identities(pd: PointData, tol: Tolerances = Tolerances(),
                            mutation: str | None = None) -> list[CheckResult]:
    res = kahler_residuals(pd.ctx, mutation)
    return [pd.result(cid, r, tol.first) for cid, r in res.items()]


def check_gauss(pd: PointData, tol: Tolerances = Tolerances(), n_args: int = 10) -> list[CheckResult]:
    """Shape operator duality g(h(X,Y),V) = g(A_V X, Y) and Gauss split of the Hessian."""
    ctx = pd.ctx
    g = ctx.geom
    rng = pd.rng(2)
    n = g.J.shape[0]
    X = g.PT @ rng.standard_normal((n, n_args))
    Y = g.PT @ rng.standard_normal((n, n_args))
    V = g.PN @ rng.standard_normal((n, n_args))
    dual = 0.0
    for k in range(n_args):
        lhs = ctx.h(X[:, k], Y[:, k]) @ V[:, k]
        rhs = (ctx.A(V[:, k]) @ X[:, k]) @ Y[:, k]
        dual = max(dual, abs(lhs - rhs))
    H = g.jet.hessian
    recon = np.einsum("ic,cab->iab", g.J, ctx.christoffels.gamma) + ctx.hamb
    split_res = float(np.max(np.abs(H - recon)))
    return [pd.result("gauss.shape_duality", dual, tol.jet), pd.result("gauss.hessian_split", split_res, tol.jet)]


# --- integrability -------------------------------------------------------------


def check_integrability(pd: PointData, i: int, tol: Tolerances = Tolerances(),
                        mutation: str | None = None) -> list[CheckResult]:
    ctx = pd.ctx
    g = ctx.geom
    fields = pd.dist_fields.get(i, [])
    if len(fields) < 2:
        return []
    prefix = f"integrability.D{i}"
    if pd.ambiguous:
        ids = ["closure", "connection_symmetry", "T_derivative_in_D", "T_bracket_identity"]
        if i == 0:
            ids += ["h_commutes_T", "h_T_bracket_identity"]
        return [pd.result(f"{prefix}.{s}", 0.0, tol.first, AMBIGUOUS) for s in sorted(ids)]
    phi, PT, PN, J = g.phi, g.PT, g.PN, g.J
    Tm, Nm = PT @ phi, PN @ phi
    Pi = pd.ambient_projector(pd.dist_cluster[i])
    others = [pd.ambient_projector(j) for d_, j in sorted(pd.dist_cluster.items()) if d_ != i]
    Fs = [_Field(f, ctx) for f in fields]
    Zs = [_Field(f, ctx) for d_, fl in sorted(pd.dist_fields.items()) if d_ != i for f in fl]
    inv = [j for d_, j in pd.dist_cluster.items() if d_ == 0]
    P0 = pd.ambient_projector(inv[0]) if inv else np.zeros_like(PT)
    st = ctx.stencil

    def nabla_of_T(Xf: _Field, Yf: _Field) -> np.ndarray:
        grad = st.gradient(lambda q: q.PT @ q.phi @ (q.J @ Yf.coeffs(q)))
        return PT @ np.tensordot(Xf.c, grad, axes=(0, 0))

    closure = connection_symmetry = h_commutes_T = proof = T_derivative_in_D = ident = 0.0
    for p in range(len(Fs)):
        for q in range(p + 1, len(Fs)):
            X, Y = Fs[p], Fs[q]
            Xa, Ya = J @ X.c, J @ Y.c
            br = J @ X.bracket_with(Y)
            for Pj in others:
                closure = max(closure, float(np.linalg.norm(Pj @ br)))
            for Z in Zs:
                nYZ = ctx.connection(Y.c, Z.c, Z.D)
                nXZ = ctx.connection(X.c, Z.c, Z.D)
                connection_symmetry = max(connection_symmetry, abs(Xa @ nYZ - Ya @ nXZ))
            diff_h = ctx.h(Xa, Tm @ Ya) - ctx.h(Tm @ Xa, Ya)
            if i == 0:
                h_commutes_T = max(h_commutes_T, float(np.linalg.norm(diff_h)))
                proof = max(proof, float(np.linalg.norm(diff_h - Nm @ (PT - P0) @ br)))
            expr = nabla_of_T(X, Y) - nabla_of_T(Y, X)
            if mutation != "drop_shape_term":
                expr = expr + ctx.A(Nm @ Xa) @ Ya - ctx.A(Nm @ Ya) @ Xa
            T_derivative_in_D = max(T_derivative_in_D, float(np.linalg.norm((PT - Pi) @ expr)))
            ident = max(ident, float(np.linalg.norm(Tm @ br - expr)))
    integrable = closure <= tol.first
    gated = None if integrable else HYP
    out = [
        pd.result(f"{prefix}.closure", closure, tol.first, gated),
        pd.result(f"{prefix}.connection_symmetry", connection_symmetry, tol.first, gated),
        pd.result(f"{prefix}.T_derivative_in_D", T_derivative_in_D, tol.first, gated),
        pd.result(f"{prefix}.T_bracket_identity", ident, tol.first),
    ]
    if i == 0:
        out.append(pd.result(f"{prefix}.h_commutes_T", h_commutes_T, tol.first, gated))
        out.append(pd.result(f"{prefix}.h_T_bracket_identity", proof, tol.first))
    return out


# --- nabla T^2 expansion --------------------------------------------------------


def codazzi_terms(pd: PointData, mutation: str | None = None):
    """Left side (nabla_{d_a} T^2) d_b and the expansion's right side, both (d, 2m, d)."""
    ctx = pd.ctx
    g = ctx.geom
    dec = ctx.decomposition
    c = dec.eigenvalues
    dc = ctx.D_cos2  # (d, n_clusters)
    if mutation == "wrong_projector":
        c, dc = np.roll(c, 1), np.roll(dc, 1, axis=1)
    P = [pd.ambient_projector(j) for j in range(len(c))]
    J = g.J
    rhs = -np.einsum("ai,ipb->apb", dc, np.stack([Pj @ J for Pj in P]))
    for j, DPj in enumerate(ctx.D_PjJ):
        nabla_PjY = np.einsum("ij,ajb->aib", g.PT, DPj)
        for i_, Pi in enumerate(P):
            if c[i_] != c[j]:
                rhs = rhs + (c[i_] - c[j]) * np.einsum("ij,ajb->aib", Pi, nabla_PjY)
    return ctx.nabla_T2, rhs


def check_codazzi_expansion(pd: PointData, tol: Tolerances = Tolerances(),
                            mutation: str | None = None) -> list[CheckResult]:
    fx = pd.fixture
    ids = ["codazzi.expansion"]
    if fx.expected_assignment:
        ids.append("codazzi.antisymmetry")
    if fx.constant_angles:
        ids += ["codazzi.constant_angle", "codazzi.nabla_T2_symmetry"]
    if fx.kind == "pointwise":
        ids.append("codazzi.slant_derivative")
    if pd.ambiguous:
        return [pd.result(cid, 0.0, tol.second, AMBIGUOUS) for cid in ids]
    try:
        lhs, rhs = codazzi_terms(pd, mutation)
        dc = pd.ctx.D_cos2
    except (ClusterMatchError, SpectrumError):
        return [pd.result(cid, 0.0, tol.second, AMBIGUOUS) for cid in ids]
    out = [pd.result("codazzi.expansion", np.max(np.linalg.norm(lhs - rhs, axis=1)), tol.second)]
    if fx.expected_assignment:
        # for coordinate fields X, Y in one D_i the bracket vanishes, leaving the X(cos^2) terms
        J = pd.ctx.geom.J
        anti = 0.0
        sym = 0.0
        for dist, cols in fx.distribution_fields.items():
            j = pd.dist_cluster[dist]
            for a in cols:
                for b in cols:
                    diff = lhs[a, :, b] - lhs[b, :, a]
                    model = -dc[a, j] * J[:, b] + dc[b, j] * J[:, a]
                    anti = max(anti, float(np.linalg.norm(diff - model)))
                    sym = max(sym, float(np.linalg.norm(diff)))
        out.append(pd.result("codazzi.antisymmetry", anti, tol.second))
        if fx.constant_angles:
            out.append(pd.result("codazzi.nabla_T2_symmetry", sym, tol.second))
    if fx.constant_angles:
        out.append(pd.result("codazzi.constant_angle", np.max(np.abs(dc)) if dc.size else 0.0, tol.first))
    if fx.kind == "pointwise":
        err = 0.0
        for dist, j in pd.dist_cluster.items():
            exact = catalog.expected_cos2_gradient(fx.kind, fx.k, dist, pd.params)
            err = max(err, float(np.max(np.abs(dc[:, j] - exact))))
        out.append(pd.result("codazzi.slant_derivative", err, tol.second))
    return out


# --- parallel tensor conditionals ---------------------------------------------

PARALLEL_T = ("parallel.nabla_T.n2_on_h_D0", "parallel.nabla_T.shape_symmetry")
PARALLEL_N = (
    "parallel.nabla_N.T2_eigen",
    "parallel.nabla_N.mixed_totally_geodesic",
    "parallel.nabla_N.n2_eigen",
    "parallel.nabla_N.h_commutes_T",
    "parallel.nabla_N.T_anticommutes_A",
    "parallel.nabla_N.A_n_identity",
)


def parallel_residuals(pd: PointData, mutation: str | None = None) -> dict[str, float]:
    ctx = pd.ctx
    g = ctx.geom
    phi, PT, PN, J = g.phi, g.PT, g.PN, g.J
    Tm, Nm, nm = PT @ phi, PN @ phi, PN @ phi @ PN
    dec = ctx.decomposition
    E = ctx.frame.tan_basis
    hform = ctx.hform
    if mutation == "h_T_corrupt":
        # non-T-compatible symmetric bilinear term h'(X,Y) = (X.w)(Y.w) V0
        w, V0 = E[:, 0], ctx.frame.nor_basis[:, 0]
        hform = hform + np.einsum("i,p,q->ipq", V0, w, w)

    def h(X, Y):
        return np.einsum("ipq,p,q->i", hform, X, Y)

    def A(V):
        return np.einsum("i,ipq->pq", V, hform)

    d, n = J.shape[1], J.shape[0]
    bases = {dist: E @ dec.clusters[j].basis for dist, j in pd.dist_cluster.items()}
    cos2 = {dist: dec.clusters[j].eigenvalue for dist, j in pd.dist_cluster.items()}
    out = dict.fromkeys(PARALLEL_T + PARALLEL_N, 0.0)

    def bump(key, val):
        out[key] = max(out[key], float(val))

    for a in range(d):
        for b in range(d):
            Xa, Yb = J[:, a], J[:, b]
            bump("parallel.nabla_T.shape_symmetry", np.linalg.norm(A(Nm @ Yb) @ Xa - A(Nm @ Xa) @ Yb))
            bump("parallel.nabla_N.h_commutes_T", np.linalg.norm(h(Tm @ Xa, Yb) - h(Xa, Tm @ Yb)))
    for a in range(d):
        Xa = J[:, a]
        for j in range(n):
            V = PN[:, j]
            bump("parallel.nabla_N.T_anticommutes_A", np.linalg.norm(Tm @ (A(V) @ Xa) + A(V) @ (Tm @ Xa)))
            bump("parallel.nabla_N.A_n_identity", np.linalg.norm(A(nm @ V) @ Xa + A(V) @ (Tm @ Xa)))
    if 0 in bases:
        B0 = bases[0]
        for X in B0.T:
            for Y in B0.T:
                hv = h(X, Y)
                if np.linalg.norm(hv) > 1e-12:
                    bump("parallel.nabla_T.n2_on_h_D0", np.linalg.norm(nm @ nm @ hv + hv))
            for dist, B in bases.items():
                if dist != 0:
                    for Y in B.T:
                        bump("parallel.nabla_N.mixed_totally_geodesic", np.linalg.norm(h(X, Y)))
    for dist, B in bases.items():
        c = cos2[dist]
        for X in B.T:
            for Y in B.T:
                hv = h(X, Y)
                bump("parallel.nabla_N.n2_eigen", np.linalg.norm(nm @ nm @ hv + c * hv))
            for j in range(n):
                AX = A(PN[:, j]) @ X
                bump("parallel.nabla_N.T2_eigen", np.linalg.norm(g.T2 @ AX + c * AX))
    return out


def check_parallel_conditionals(pd: PointData, tol: Tolerances = Tolerances(), hyp_norms: dict | None = None,
                                mutation: str | None = None) -> list[CheckResult]:
    """Consequences of nabla T = 0 / nabla N = 0, gated on the measured norms.

    ``hyp_norms`` are the sample-wide maxima of |nabla T| and |nabla N|; the
    point's own values are used when omitted.
    """
    norms = hyp_norms or pd.ctx.tensor_norms()
    res = parallel_residuals(pd, mutation)
    return gate_parallel([pd.result(cid, r, tol.first) for cid, r in sorted(res.items())], norms, tol.hyp,
                         ambiguous=pd.ambiguous)


def gate_parallel(results: list[CheckResult], norms: dict, hyp_tol: float, ambiguous: bool = False) -> list[CheckResult]:
    out = []
    for r in results:
        key = "T" if r.check_id.startswith("parallel.nabla_T.") else "N"
        if ambiguous and "eigen" in r.check_id or ambiguous and "D0" in r.check_id or ambiguous and "mixed" in r.check_id:
            status = AMBIGUOUS
        elif norms[key] > hyp_tol:
            status = HYP
        else:
            status = _status(r.residual, r.tolerance)
        out.append(replace(r, status=status))
    return out


# --- suite ---------------------------------------------------------------------


@dataclass(frozen=True)
class SuiteConfig:
    target: str
    k: int | None = None
    points: int = 50
    seed: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)
    fd_step: float = FD_STEP
    cluster_tol: float = CLUSTER_TOL
    margin: float = 0.05
    mutation: str | None = None
    ambient: str | None = None
    n_args: int = 20

    def __post_init__(self):
        if self.points < 1:
            raise ValueError("points must be >= 1")
        if not 1e-8 < self.fd_step < 1e-2:
            raise ValueError("fd_step must lie in (1e-8, 1e-2)")
        if self.mutation is not None and self.mutation not in MUTATIONS:
            raise ValueError(f"unknown mutation {self.mutation!r}; choose from {sorted(MUTATIONS)}")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["tolerances"] = asdict(self.tolerances)
        return out


def resolve_target(target: str, k: int | None = None, ambient: str | None = None) -> tuple[ExampleFixture, str]:
    """Fixture plus an identifier (catalog name or source hash)."""
    try:
        fx = catalog.resolve(target, k)
        return fx, fx.name
    except KeyError:
        pass
    path = Path(target)
    if not path.is_file():
        raise FileNotFoundError(f"no catalog entry or DSL file named {target!r}")
    prog = load_immersion(path)
    amb = parse_ambient(ambient, path.parent) if ambient else None
    if amb is not None:
        res = validate_structure(amb)
        if not res.ok():
            raise ValueError("ambient structure fails validation")
    digest = hashlib.sha256(prog.source.encode("utf-8")).hexdigest()[:16]
    return catalog.custom_fixture(prog, amb, name=f"custom:{digest}"), f"sha256:{digest}"


def sample_points(fx: ExampleFixture, n: int, seed: int, margin: float = 0.05) -> np.ndarray:
    """Seeded uniform samples of the admissible region, kept ``margin`` inside its boundary."""
    rng = np.random.default_rng(seed)
    prog = fx.immersion
    d = prog.arity
    norm_preds = [p for p in prog.domain if p.index is None]
    radius = min(p.bound for p in norm_preds) - margin if norm_preds else None
    pts: list[np.ndarray] = []
    tries = 0
    while len(pts) < n:
        tries += 1
        if tries > 10000 * n:
            raise RuntimeError("admissible region too small to sample")
        if radius is not None:
            v = rng.standard_normal(d)
            x = v / np.linalg.norm(v) * radius * rng.random() ** (1.0 / d)
        else:
            x = rng.uniform(-1.0 + margin, 1.0 - margin, d)
        if prog.in_domain(x, margin):
            pts.append(x)
    return np.array(pts)


@dataclass
class PointOutcome:
    index: int
    results: list[CheckResult]
    norms: dict[str, float]
    angles: dict[int, float]
    signature: str
    ambiguous: bool
    error: str | None = None


def evaluate_point(fx: ExampleFixture, x, index: int, config: SuiteConfig) -> PointOutcome:
    tol = config.tolerances
    mut = config.mutation
    try:
        pd = prepare_point(fx, x, index, config.fd_step, config.cluster_tol, config.seed)
    except (ImmersionDegenerate, StencilError, SpectrumError, DomainViolation) as exc:
        return PointOutcome(index, [], {}, {}, "", False, f"{type(exc).__name__}: {exc}")
    results = []
    results += check_algebraic(pd, tol, config.n_args, mut)
    results += check_catalog(pd, tol)
    results += check_gauss(pd, tol)
    results += check_kahler_identities(pd, tol, mut)
    for i in sorted(pd.dist_fields):
        results += check_integrability(pd, i, tol, mut)
    results += check_codazzi_expansion(pd, tol, mut)
    norms = pd.ctx.tensor_norms()
    # gated again after aggregation with the sample-wide hypothesis norms
    results += check_parallel_conditionals(pd, tol, norms, mut)
    dec = pd.ctx.decomposition
    angles = {dist: dec.clusters[j].angle for dist, j in pd.dist_cluster.items()}
    return PointOutcome(index, results, norms, angles, dec.signature(), pd.ambiguous)


def _worker_init(config: SuiteConfig):
    global _WORKER_FX
    _WORKER_FX = resolve_target(config.target, config.k, config.ambient)[0]


def _worker_eval(args):
    x, index, config = args
    return evaluate_point(_WORKER_FX, x, index, config)


def default_workers() -> int:
    env = os.environ.get("SLANTLAB_WORKERS")
    if env:
        n = int(env)
        if n < 1:
            raise ValueError("SLANTLAB_WORKERS must be a positive integer")
        return n
    return len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1)


@dataclass
class SuiteReport:
    target: str
    config: dict
    results: list[CheckResult]
    summary: dict
    histogram: dict[str, int]

    @property
    def n_fail(self) -> int:
        return self.summary["status_counts"].get(FAIL, 0) + len(self.summary.get("errors", []))

    @property
    def exit_code(self) -> int:
        if self.n_fail or self.summary.get("all_ambiguous"):
            return 1
        return 0

    def to_dict(self) -> dict:
        return {
            "config": dict(self.config, target_id=self.target),
            "results": [r.to_dict() for r in self.results],
            "summary": self.summary,
            "histogram": self.histogram,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["check_id", "point_index", "residual", "tolerance", "status"])
        for r in self.results:
            w.writerow([r.check_id, r.point_index, repr(r.residual), repr(r.tolerance), r.status])
        return buf.getvalue()

    @classmethod
    def from_dict(cls, data: dict) -> "SuiteReport":
        config = dict(data["config"])
        target = config.pop("target_id", config.get("target", ""))
        results = [
            CheckResult(r["check_id"], r["point_index"], tuple(r["point"]), r["residual"], r["tolerance"], r["status"])
            for r in data["results"]
        ]
        return cls(target, config, results, data["summary"], data["histogram"])


def summarize(results: list[CheckResult], extras: dict | None = None) -> dict:
    per_check: dict[str, dict] = {}
    counts = {PASS: 0, FAIL: 0, HYP: 0, AMBIGUOUS: 0}
    for r in results:
        counts[r.status] += 1
        e = per_check.setdefault(r.check_id, {"max_residual": 0.0, "tolerance": r.tolerance, PASS: 0, FAIL: 0, HYP: 0, AMBIGUOUS: 0})
        e[r.status] += 1
        if r.status in (PASS, FAIL):
            e["max_residual"] = max(e["max_residual"], r.residual)
    out = {"checks": per_check, "status_counts": counts}
    if extras:
        out.update(extras)
    return out


def run_suite(config: SuiteConfig, workers: int | None = None) -> SuiteReport:
    fx, target_id = resolve_target(config.target, config.k, config.ambient)
    pts = sample_points(fx, config.points, config.seed, config.margin)
    workers = default_workers() if workers is None else workers
    jobs = [(x, i, config) for i, x in enumerate(pts)]
    if workers > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers, initializer=_worker_init, initargs=(config,)) as ex:
            outcomes = list(ex.map(_worker_eval, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        outcomes = [evaluate_point(fx, x, i, config) for x, i, _ in jobs]
    return aggregate(fx, target_id, config, outcomes)


def aggregate(fx: ExampleFixture, target_id: str, config: SuiteConfig, outcomes: list[PointOutcome]) -> SuiteReport:
    outcomes = sorted(outcomes, key=lambda o: o.index)
    keys = ("T", "N", "t", "n")
    norms = {k: max((o.norms[k] for o in outcomes if o.norms), default=0.0) for k in keys}
    results: list[CheckResult] = []
    for o in outcomes:
        plain = [r for r in o.results if not r.check_id.startswith("parallel.")]
        par = [r for r in o.results if r.check_id.startswith("parallel.")]
        results += plain + gate_parallel(par, norms, config.tolerances.hyp, ambiguous=o.ambiguous)
    results.sort(key=lambda r: (r.check_id, r.point_index))
    histogram: dict[str, int] = {}
    for o in outcomes:
        if o.error is None:
            key = o.signature + (" (ambiguous)" if o.ambiguous else "")
            histogram[key] = histogram.get(key, 0) + 1
    angle_stats = {}
    dists = sorted({d for o in outcomes for d in o.angles})
    for dist in dists:
        vals = np.array([o.angles[dist] for o in outcomes if dist in o.angles and not o.ambiguous])
        if vals.size:
            angle_stats[f"D{dist}"] = {
                "mean": float(vals.mean()),
                "std": float(vals.std()),
                "min": float(vals.min()),
                "max": float(vals.max()),
            }
    evaluated = [o for o in outcomes if o.error is None]
    extras = {
        "hypothesis_norms": {f"nabla_{k}": v for k, v in norms.items()},
        "slant_angles": angle_stats,
        "points": len(outcomes),
        "ambiguous_points": sum(o.ambiguous for o in evaluated),
        "all_ambiguous": bool(evaluated) and all(o.ambiguous for o in evaluated),
        "errors": [{"point_index": o.index, "error": o.error} for o in outcomes if o.error is not None],
    }
    return SuiteReport(target_id, config.to_dict(), results, summarize(results, extras), histogram)


def classify(fx: ExampleFixture, x, cluster_tol: float = CLUSTER_TOL) -> dict:
    """Slant decomposition at a single parameter point."""
    from .expr_dsl import eval_jet2
    from .tangent_geometry import analyze_point, wirtinger_spectrum

    x = np.asarray(x, dtype=float)
    jet = eval_jet2(fx.immersion, x)
    pa = analyze_point(jet, fx.ambient, x, cluster_tol)
    clusters = []
    for c in pa.decomposition.clusters:
        label = "invariant" if c.invariant else ("anti-invariant" if c.anti_invariant else "slant")
        clusters.append({"cos2": c.eigenvalue, "angle": c.angle, "multiplicity": c.multiplicity, "label": label})
    return {
        "target": fx.name,
        "point": [float(v) for v in x],
        "spectrum": wirtinger_spectrum(pa.split, cluster_tol),
        "clusters": clusters,
        "ambiguous": pa.decomposition.ambiguous,
        "k": sum(1 for c in pa.decomposition.clusters if not c.invariant),
    }


def load_report(path) -> SuiteReport:
    with open(path, encoding="utf-8") as fh:
        return SuiteReport.from_dict(json.load(fh))


__all__ = [
    "AMBIGUOUS",
    "FAIL",
    "HYP",
    "MUTATIONS",
    "PASS",
    "CheckResult",
    "PointData",
    "SuiteConfig",
    "SuiteReport",
    "Tolerances",
    "check_algebraic",
    "check_catalog",
    "check_codazzi_expansion",
    "check_gauss",
    "check_integrability",
    "check_kahler_identities",
    "check_parallel_conditionals",
    "classify",
    "evaluate_point",
    "load_report",
    "prepare_point",
    "resolve_target",
    "run_suite",
    "sample_points",
]
