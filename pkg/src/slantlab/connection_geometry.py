"""Second-order geometry at a point of an immersion into flat R^{2m}.

Quantities fixed by the 2-jet of the immersion (h, Christoffel symbols, shape
operators) come straight from exact jets. Derivatives of fields built from
projections (TY, NY, tV, nV, T^2 Y, P_j Y) are taken by central differences of
their *ambient-coordinate* representation, then projected. Frame coefficients
are never differentiated: frames are not smooth in general, ambient fields are.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .ambient import HermitianStructure
from .expr_dsl import ExpressionProgram, Jet2, eval_jet2, eval_jet2_batch
from .tangent_geometry import (
    CLUSTER_TOL,
    ImmersionDegenerate,
    PointFrame,
    SlantDecomposition,
    build_frame,
    detect_distributions,
    split_phi,
)

FD_STEP = 1e-5
ILL_CONDITIONED = 1e8


class StencilError(RuntimeError):
    pass


class ClusterMatchError(RuntimeError):
    """Clusters at a stencil point cannot be matched to the base point (angle crossing)."""


# --- 2-jet quantities -------------------------------------------------------


@dataclass(frozen=True)
class SecondFundamentalForm:
    components: np.ndarray  # (2m-d, d, d): normal-frame index, coordinate indices

    def vector(self, frame: PointFrame, a: int, b: int) -> np.ndarray:
        return frame.nor_basis @ self.components[:, a, b]


@dataclass(frozen=True)
class Christoffels:
    gamma: np.ndarray  # (d, d, d) indexed [c, a, b]
    condition: float
    warning: str | None = None


def second_fundamental_form(jet: Jet2, frame: PointFrame) -> SecondFundamentalForm:
    nor = frame.nor_projector @ jet.hessian.reshape(jet.hessian.shape[0], -1)
    d = frame.d
    return SecondFundamentalForm((frame.nor_basis.T @ nor).reshape(-1, d, d))


def tangential_connection(jet: Jet2, frame: PointFrame) -> Christoffels:
    J = frame.coord_basis
    d = frame.d
    tan = frame.tan_projector @ jet.hessian.reshape(J.shape[0], -1)
    coef, *_ = np.linalg.lstsq(J, tan, rcond=None)
    cond = float(np.linalg.cond(J))
    warn = None
    if cond > ILL_CONDITIONED:
        warn = f"coordinate basis ill-conditioned (cond {cond:.3e})"
    return Christoffels(coef.reshape(d, d, d), cond, warn)


def shape_operator(sff: SecondFundamentalForm, frame: PointFrame, V) -> np.ndarray:
    """A_V in the orthonormal tangent frame; V given in normal-frame coordinates."""
    V = np.asarray(V, dtype=float)
    S = np.einsum("i,iab->ab", V, sff.components)  # coordinate matrix h(d_a, d_b).V
    C = frame.coord_to_frame
    Cinv = np.linalg.inv(C)
    A = Cinv.T @ S @ Cinv
    return 0.5 * (A + A.T)


def lie_bracket(X, Y, x) -> np.ndarray:
    """[X, Y] in the coordinate frame; X, Y expose ``value(x)`` and ``jacobian(x)``."""
    return Y.jacobian(x) @ X.value(x) - X.jacobian(x) @ Y.value(x)


# --- finite differences of ambient fields ------------------------------------


@dataclass(frozen=True)
class FieldDerivative:
    value: np.ndarray  # Richardson-extrapolated
    coarse: np.ndarray  # step h
    fine: np.ndarray  # step h/2
    one_sided: bool = False


def _richardson(fp, fm, fhp, fhm, step):
    coarse = (fp - fm) / (2 * step)
    fine = (fhp - fhm) / step
    return (4 * fine - coarse) / 3, coarse, fine


def _one_sided(f0, f1, f2, s, sign):
    # second-order one-sided difference, nodes 0, s, 2s along sign
    return sign * (-3 * f0 + 4 * f1 - f2) / (2 * s)


def ambient_field_derivative(field: Callable, a: int, x, step: float = FD_STEP) -> FieldDerivative:
    """Derivative along d/dx_a of a vector field given as params -> ambient vector."""
    x = np.asarray(x, dtype=float)
    e = np.zeros_like(x)
    e[a] = 1.0

    def ev(t):
        try:
            return np.asarray(field(x + t * e), dtype=float)
        except (ArithmeticError, ValueError):
            return None

    fp, fm, fhp, fhm = ev(step), ev(-step), ev(step / 2), ev(-step / 2)
    if all(v is not None for v in (fp, fm, fhp, fhm)):
        return FieldDerivative(*_richardson(fp, fm, fhp, fhm, step))
    f0 = ev(0.0)
    if f0 is None:
        raise StencilError(f"field not evaluable at the base point {x}")
    if fp is not None and fhp is not None:
        val = _one_sided(f0, fhp, fp, step / 2, 1.0)
    elif fm is not None and fhm is not None:
        val = _one_sided(f0, fhm, fm, step / 2, -1.0)
    else:
        raise StencilError(f"field not evaluable on either side of {x} along direction {a}")
    return FieldDerivative(val, val, val, one_sided=True)


# --- per-point geometry on a stencil ---------------------------------------


class LocalGeometry:
    """Jet-derived data at one parameter point (center or stencil node)."""

    def __init__(self, params, jet: Jet2, ambient: HermitianStructure, cluster_tol: float = CLUSTER_TOL):
        self.params = np.asarray(params, dtype=float)
        self.jet = jet
        self.ambient = ambient
        self.cluster_tol = cluster_tol
        self.frame = build_frame(jet, ambient, params)
        self.J = self.frame.coord_basis
        self.PT = self.frame.tan_projector
        self.PN = np.eye(ambient.dim) - self.PT
        self.phi = ambient.phi

    @cached_property
    def split(self):
        return split_phi(self.frame, self.ambient)

    @cached_property
    def decomposition(self) -> SlantDecomposition:
        return detect_distributions(self.split, self.frame, self.ambient, self.cluster_tol)

    @cached_property
    def L(self) -> np.ndarray:
        """Left inverse of J: ambient tangent vector -> coordinate components."""
        G = self.J.T @ self.J
        return np.linalg.solve(G, self.J.T)

    @cached_property
    def T2(self) -> np.ndarray:
        """Ambient operator of T^2 on tangent vectors (zero on normals)."""
        A = self.PT @ self.phi @ self.PT
        return A @ A

    def cluster_projectors(self) -> list[np.ndarray]:
        E = self.frame.tan_basis
        return [E @ c.projector @ E.T for c in self.decomposition.clusters]


def match_clusters(base: SlantDecomposition, other: SlantDecomposition) -> list[int]:
    """Index in ``other`` of the cluster continuing each base cluster."""
    if other.ambiguous or len(other.clusters) != len(base.clusters):
        raise ClusterMatchError("cluster structure changes across the stencil")
    vals = other.eigenvalues
    out = []
    for c in base.clusters:
        j = int(np.argmin(np.abs(vals - c.eigenvalue)))
        if other.clusters[j].multiplicity != c.multiplicity:
            raise ClusterMatchError("multiplicity mismatch across the stencil")
        out.append(j)
    if len(set(out)) != len(out):
        raise ClusterMatchError("two base clusters map to one stencil cluster")
    return out


class Stencil:
    """Center point plus nodes x +- h e_a and x +- h/2 e_a for every direction a."""

    OFFSETS = (1.0, -1.0, 0.5, -0.5)

    def __init__(self, prog: ExpressionProgram, ambient: HermitianStructure, x, step: float = FD_STEP,
                 cluster_tol: float = CLUSTER_TOL):
        self.prog = prog
        self.ambient = ambient
        self.x = np.asarray(x, dtype=float)
        self.step = step
        self.cluster_tol = cluster_tol
        d = self.x.size
        self.d = d
        pts = [self.x]
        for a in range(d):
            for s in self.OFFSETS:
                p = self.x.copy()
                p[a] += s * step
                pts.append(p)
        jets, bad = eval_jet2_batch(prog, np.array(pts))
        if bad[0]:
            raise StencilError(f"immersion not evaluable at {self.x}")
        self.center = LocalGeometry(self.x, Jet2(jets.value[0], jets.jacobian[0], jets.hessian[0]), ambient, cluster_tol)
        self.nodes: dict[tuple[int, float], LocalGeometry | None] = {}
        k = 1
        for a in range(d):
            for s in self.OFFSETS:
                geom = None
                if not bad[k]:
                    try:
                        geom = LocalGeometry(pts[k], Jet2(jets.value[k], jets.jacobian[k], jets.hessian[k]), ambient, cluster_tol)
                    except ImmersionDegenerate:
                        geom = None
                self.nodes[(a, s)] = geom
                k += 1
        self.one_sided = sorted({a for (a, s), g in self.nodes.items() if g is None})

    def derivative(self, fn: Callable[[LocalGeometry], np.ndarray], a: int) -> np.ndarray:
        g = self.nodes
        h = self.step
        full = [g[(a, s)] for s in self.OFFSETS]
        if all(n is not None for n in full):
            val, _, _ = _richardson(*(fn(n) for n in full), h)
            return val
        f0 = fn(self.center)
        if g[(a, 1.0)] is not None and g[(a, 0.5)] is not None:
            return _one_sided(f0, fn(g[(a, 0.5)]), fn(g[(a, 1.0)]), h / 2, 1.0)
        if g[(a, -1.0)] is not None and g[(a, -0.5)] is not None:
            return _one_sided(f0, fn(g[(a, -0.5)]), fn(g[(a, -1.0)]), h / 2, -1.0)
        raise StencilError(f"no usable stencil along direction {a} at {self.x}")

    def gradient(self, fn: Callable[[LocalGeometry], np.ndarray]) -> np.ndarray:
        """Stack of derivatives along every coordinate direction, leading axis a."""
        return np.stack([self.derivative(fn, a) for a in range(self.d)])

    def matched(self, geom: LocalGeometry) -> list[int]:
        if geom is self.center:
            return list(range(len(geom.decomposition.clusters)))
        return match_clusters(self.center.decomposition, geom.decomposition)


# --- covariant data ---------------------------------------------------------


@dataclass
class CovariantData:
    """Everything needed for the derivative identities at one point."""

    stencil: Stencil
    sff: SecondFundamentalForm = field(init=False)
    christoffels: Christoffels = field(init=False)

    def __post_init__(self):
        c = self.stencil.center
        self.sff = second_fundamental_form(c.jet, c.frame)
        self.christoffels = tangential_connection(c.jet, c.frame)
        if self.christoffels.warning:
            warnings.warn(self.christoffels.warning, RuntimeWarning, stacklevel=2)

    @classmethod
    def at(cls, prog: ExpressionProgram, ambient: HermitianStructure, x, step: float = FD_STEP,
           cluster_tol: float = CLUSTER_TOL) -> "CovariantData":
        return cls(Stencil(prog, ambient, x, step, cluster_tol))

    # shorthands
    @property
    def geom(self) -> LocalGeometry:
        return self.stencil.center

    @property
    def frame(self) -> PointFrame:
        return self.geom.frame

    @property
    def split(self):
        return self.geom.split

    @property
    def decomposition(self) -> SlantDecomposition:
        return self.geom.decomposition

    @property
    def x(self) -> np.ndarray:
        return self.stencil.x

    @cached_property
    def hamb(self) -> np.ndarray:
        """h(d_a, d_b) as ambient vectors, shape (2m, d, d)."""
        H = self.geom.jet.hessian
        return np.einsum("ij,jab->iab", self.geom.PN, H)

    @cached_property
    def K(self) -> np.ndarray:
        """h(d_a, Z) = K[:, a, :] @ Z for ambient tangent Z; shape (2m, d, 2m)."""
        return np.einsum("iab,bq->iaq", self.hamb, self.geom.L)

    @cached_property
    def hform(self) -> np.ndarray:
        """h on ambient tangent arguments: h(X, Y) = einsum('ipq,p,q', hform, X, Y)."""
        return np.einsum("iaq,ap->ipq", self.K, self.geom.L)

    def h(self, X, Y) -> np.ndarray:
        return np.einsum("ipq,p...,q...->i...", self.hform, X, Y)

    def A(self, V) -> np.ndarray:
        """Ambient matrix of the shape operator A_V (V an ambient normal vector)."""
        return np.einsum("i,ipq->pq", V, self.hform)

    # tensors along coordinate fields, leading axis = differentiation direction
    @cached_property
    def D_TJ(self):
        return self.stencil.gradient(lambda g: g.PT @ g.phi @ g.J)

    @cached_property
    def D_NJ(self):
        return self.stencil.gradient(lambda g: g.PN @ g.phi @ g.J)

    @cached_property
    def D_tN(self):
        return self.stencil.gradient(lambda g: g.PT @ g.phi @ g.PN)

    @cached_property
    def D_nN(self):
        return self.stencil.gradient(lambda g: g.PN @ g.phi @ g.PN)

    @cached_property
    def D_PN(self):
        return self.stencil.gradient(lambda g: g.PN)

    @cached_property
    def D_T2J(self):
        return self.stencil.gradient(lambda g: g.T2 @ g.J)

    @cached_property
    def D_PjJ(self) -> list[np.ndarray]:
        """Derivatives of P_j d_b for every cluster j of the center decomposition."""
        st = self.stencil

        def proj(g, j):
            idx = st.matched(g)[j]
            E = g.frame.tan_basis
            P = g.decomposition.clusters[idx].projector
            return E @ (P @ (E.T @ g.J))

        return [st.gradient(lambda g, j=j: proj(g, j)) for j in range(len(self.decomposition.clusters))]

    @cached_property
    def D_cos2(self) -> np.ndarray:
        """(d, n_clusters): derivative of each matched cluster eigenvalue."""
        st = self.stencil

        def vals(g):
            idx = st.matched(g)
            ev = g.decomposition.eigenvalues
            return np.array([ev[i] for i in idx])

        return st.gradient(vals)

    # covariant derivatives of the phi-blocks along coordinate fields
    @cached_property
    def nabla_T(self) -> np.ndarray:
        """(d, 2m, d): [a, :, b] = (nabla_{d_a} T) d_b as ambient tangent vector."""
        g = self.geom
        H = g.jet.hessian
        inner = np.einsum("ij,jab->aib", g.PT @ g.phi @ g.PT, H)
        return np.einsum("ij,ajb->aib", g.PT, self.D_TJ) - inner

    @cached_property
    def nabla_N(self) -> np.ndarray:
        g = self.geom
        inner = np.einsum("ij,jab->aib", g.PN @ g.phi @ g.PT, g.jet.hessian)
        return np.einsum("ij,ajb->aib", g.PN, self.D_NJ) - inner

    @cached_property
    def nabla_t(self) -> np.ndarray:
        """(d, 2m, 2m): [a, :, i] = (nabla_{d_a} t) V_i with V_i = P_N e_i."""
        g = self.geom
        conn = np.einsum("ij,ajk->aik", g.PN, self.D_PN)  # nabla-perp V_i
        return np.einsum("ij,ajk->aik", g.PT, self.D_tN) - np.einsum("ij,ajk->aik", g.PT @ g.phi, conn)

    @cached_property
    def nabla_n(self) -> np.ndarray:
        g = self.geom
        conn = np.einsum("ij,ajk->aik", g.PN, self.D_PN)
        return np.einsum("ij,ajk->aik", g.PN, self.D_nN) - np.einsum("ij,ajk->aik", g.PN @ g.phi, conn)

    @cached_property
    def nabla_T2(self) -> np.ndarray:
        g = self.geom
        inner = np.einsum("ij,jab->aib", g.T2 @ g.PT, g.jet.hessian)
        return np.einsum("ij,ajb->aib", g.PT, self.D_T2J) - inner

    def tensor_norms(self) -> dict[str, float]:
        def mx(arr):
            return float(np.max(np.linalg.norm(arr, axis=1))) if arr.size else 0.0

        return {"T": mx(self.nabla_T), "N": mx(self.nabla_N), "t": mx(self.nabla_t), "n": mx(self.nabla_n)}

    def connection(self, Xc, Yc, dY) -> np.ndarray:
        """nabla_X Y as an ambient vector from coordinate data.

        ``dY[c, a]`` is the derivative of the coefficient Y^c along d_a.
        """
        gamma = self.christoffels.gamma
        return self.geom.J @ (dY @ Xc + np.einsum("cab,a,b->c", gamma, Xc, Yc))


# --- generic covariant derivative of phi-blocks -----------------------------

TANGENT_OPS = ("T", "N", "T2")
NORMAL_OPS = ("t", "n")


def _field_coeffs(field, geom: LocalGeometry) -> np.ndarray:
    if hasattr(field, "coeffs"):
        return np.asarray(field.coeffs(geom), dtype=float)
    return np.asarray(field.value(geom.params), dtype=float)


def _field_jacobian(field, ctx: CovariantData) -> np.ndarray:
    if hasattr(field, "jacobian"):
        return np.asarray(field.jacobian(ctx.x), dtype=float)
    return ctx.stencil.gradient(lambda q: _field_coeffs(field, q)).T


def covariant_tensor_derivative(which: str, X, arg, ctx: CovariantData) -> np.ndarray:
    """(nabla_X S) arg for S in {T, N, t, n, T2}, as an ambient vector.

    ``X`` and tangent ``arg`` are vector fields on M (``value(x)`` in the
    coordinate frame, or ``coeffs(geom)``); for ``t`` and ``n`` the argument is
    a normal field given as a callable ``LocalGeometry -> ambient normal``.
    The outer derivative differentiates the ambient representation of the
    field ``p -> S(arg(p))``; the inner term uses the induced connections.
    """
    st = ctx.stencil
    g = ctx.geom
    Xc = _field_coeffs(X, g)

    def along_X(fn):
        return np.tensordot(Xc, st.gradient(fn), axes=(0, 0))

    ops = {
        "T": lambda q: q.PT @ q.phi,
        "N": lambda q: q.PN @ q.phi,
        "T2": lambda q: q.T2,
        "t": lambda q: q.PT @ q.phi,
        "n": lambda q: q.PN @ q.phi,
    }
    if which not in ops:
        raise ValueError(f"unknown operator {which!r}")
    op = ops[which]
    if which in TANGENT_OPS:
        outer_proj = g.PN if which == "N" else g.PT
        outer = outer_proj @ along_X(lambda q: op(q) @ (q.J @ _field_coeffs(arg, q)))
        inner_arg = ctx.connection(Xc, _field_coeffs(arg, g), _field_jacobian(arg, ctx))
    else:
        outer_proj = g.PN if which == "n" else g.PT
        outer = outer_proj @ along_X(lambda q: op(q) @ arg(q))
        inner_arg = g.PN @ along_X(lambda q: arg(q))  # nabla-perp_X V
    return outer - op(g) @ inner_arg


def projected_normal_field(E) -> Callable[[LocalGeometry], np.ndarray]:
    """Normal field p -> P_N(p) E for a fixed ambient vector E."""
    E = np.asarray(E, dtype=float)
    return lambda g: g.PN @ E


def induced_metric(prog: ExpressionProgram, x) -> np.ndarray:
    J = eval_jet2(prog, x).jacobian
    return J.T @ J
