"""Pointwise tangent/normal splitting and slant decomposition.

Everything here is evaluated at one point of the immersion. Frames are
orthonormal, so the blocks T, N, t, n of phi are plain matrices in those
frames and skew-adjointness becomes matrix skew-symmetry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ambient import HermitianStructure
from .expr_dsl import Jet2

RANK_TOL = 1e-8
CLUSTER_TOL = 1e-6
SPECTRUM_GUARD = 1e-6
GUARD_BAND = 10.0


class ImmersionDegenerate(ValueError):
    def __init__(self, singular_value: float):
        self.singular_value = singular_value
        super().__init__(f"jacobian is rank deficient (smallest singular value {singular_value:.3e})")


class SpectrumError(ValueError):
    """Spectrum of -T^2 inconsistent with a skew contraction (corrupted frame or structure)."""


@dataclass(frozen=True)
class PointFrame:
    params: np.ndarray
    ambient_point: np.ndarray
    coord_basis: np.ndarray  # (2m, d) jacobian columns
    tan_basis: np.ndarray  # (2m, d) orthonormal
    nor_basis: np.ndarray  # (2m, 2m-d) orthonormal
    tan_projector: np.ndarray  # (2m, 2m)

    @property
    def d(self) -> int:
        return self.tan_basis.shape[1]

    @property
    def nor_projector(self) -> np.ndarray:
        return np.eye(self.tan_projector.shape[0]) - self.tan_projector

    @property
    def coord_to_frame(self) -> np.ndarray:
        """Upper-triangular C with coord_basis = tan_basis @ C."""
        return self.tan_basis.T @ self.coord_basis


@dataclass(frozen=True)
class PhiSplit:
    T: np.ndarray  # (d, d)
    N: np.ndarray  # (2m-d, d)
    t: np.ndarray  # (d, 2m-d)
    n: np.ndarray  # (2m-d, 2m-d)


@dataclass(frozen=True)
class SlantCluster:
    eigenvalue: float  # cos^2 of the slant angle, in [0, 1]
    multiplicity: int
    projector: np.ndarray  # (d, d) in the tangent frame
    basis: np.ndarray  # (d, multiplicity) orthonormal eigenvectors
    angle: float
    invariant: bool
    anti_invariant: bool
    normal_projector: np.ndarray | None  # onto N(D_i), None for the invariant cluster


@dataclass(frozen=True)
class SlantDecomposition:
    clusters: tuple[SlantCluster, ...]  # eigenvalue descending
    H_projector: np.ndarray  # phi-invariant normal complement
    ambiguous: bool = False
    min_gap: float = float("inf")
    cluster_tol: float = CLUSTER_TOL

    @property
    def angles(self) -> tuple[float, ...]:
        return tuple(c.angle for c in self.clusters)

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([c.eigenvalue for c in self.clusters])

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return tuple(c.multiplicity for c in self.clusters)

    @property
    def normal_projectors(self) -> list[np.ndarray]:
        return [c.normal_projector for c in self.clusters if c.normal_projector is not None]

    def signature(self) -> str:
        return ",".join(str(m) for m in self.multiplicities)


def _mgs(A: np.ndarray) -> np.ndarray:
    """Modified Gram-Schmidt with one re-orthogonalization pass, column order kept."""
    Q = np.array(A, dtype=float, copy=True)
    k = Q.shape[1]
    for j in range(k):
        v = Q[:, j]
        for _ in range(2):
            for i in range(j):
                v = v - (Q[:, i] @ v) * Q[:, i]
        Q[:, j] = v / np.linalg.norm(v)
    return Q


def build_frame(jet: Jet2, ambient: HermitianStructure, params=None, rank_tol: float = RANK_TOL) -> PointFrame:
    J = np.asarray(jet.jacobian, dtype=float)
    if J.shape[0] != ambient.dim:
        raise ValueError(f"immersion has {J.shape[0]} outputs but ambient dimension is {ambient.dim}")
    d = J.shape[1]
    if d > J.shape[0]:
        raise ImmersionDegenerate(0.0)
    smin = float(np.linalg.svd(J, compute_uv=False)[-1])
    if smin <= rank_tol:
        raise ImmersionDegenerate(smin)
    E_T = _mgs(J)
    Q, _ = np.linalg.qr(E_T, mode="complete")
    E_N = Q[:, d:]
    # re-project once so tangent and normal frames are orthogonal to working precision
    E_N = _mgs(E_N - E_T @ (E_T.T @ E_N)) if E_N.shape[1] else E_N
    P = E_T @ E_T.T
    params = np.zeros(d) if params is None else np.asarray(params, dtype=float)
    return PointFrame(params, np.asarray(jet.value, dtype=float), J, E_T, E_N, P)


def split_phi(frame: PointFrame, ambient: HermitianStructure) -> PhiSplit:
    phi = ambient.phi
    if phi.shape[0] != frame.tan_basis.shape[0]:
        raise ValueError("frame and ambient structure have different dimensions")
    E_T, E_N = frame.tan_basis, frame.nor_basis
    return PhiSplit(E_T.T @ phi @ E_T, E_N.T @ phi @ E_T, E_T.T @ phi @ E_N, E_N.T @ phi @ E_N)


def _eig_TtT(split: PhiSplit):
    T = split.T
    w, V = np.linalg.eigh(T.T @ T)
    order = np.argsort(-w, kind="stable")
    w, V = w[order], V[:, order]
    if w.size and (w[0] > 1 + SPECTRUM_GUARD or w[-1] < -SPECTRUM_GUARD):
        raise SpectrumError(f"eigenvalues of -T^2 outside [0, 1]: [{w[-1]:.3e}, {w[0]:.3e}]")
    return np.clip(w, 0.0, 1.0), V


def _group(w: np.ndarray, tol: float) -> list[list[int]]:
    groups: list[list[int]] = []
    for i, val in enumerate(w):
        if groups and w[groups[-1][-1]] - val <= tol:
            groups[-1].append(i)
        else:
            groups.append([i])
    return groups


def wirtinger_spectrum(split: PhiSplit, cluster_tol: float = CLUSTER_TOL) -> list[tuple[float, int]]:
    """Eigenvalues of -T^2 = T^T T with multiplicities, descending."""
    w, _ = _eig_TtT(split)
    out = []
    for g in _group(w, cluster_tol):
        val = float(np.mean(w[g]))
        if val > cluster_tol and len(g) % 2:
            raise SpectrumError(f"eigenvalue {val:.6g} of -T^2 has odd multiplicity {len(g)}")
        out.append((val, len(g)))
    return out


def _orthonormal_columns(A: np.ndarray, rank: int) -> np.ndarray:
    U, _, _ = np.linalg.svd(A, full_matrices=False)
    return U[:, :rank]


def detect_distributions(
    split: PhiSplit,
    frame: PointFrame | None = None,
    ambient: HermitianStructure | None = None,
    cluster_tol: float = CLUSTER_TOL,
) -> SlantDecomposition:
    if cluster_tol <= 0:
        raise ValueError("cluster_tol must be positive")
    w, V = _eig_TtT(split)
    groups = _group(w, cluster_tol)
    n_nor = split.n.shape[0]
    clusters = []
    Q_sum = np.zeros((n_nor, n_nor))
    for g in groups:
        val = float(np.mean(w[g]))
        if val > cluster_tol and len(g) % 2:
            raise SpectrumError(f"eigenvalue {val:.6g} of -T^2 has odd multiplicity {len(g)}")
        B = _mgs(V[:, g])
        P = B @ B.T
        TB, NB = split.T @ B, split.N @ B
        angle = float(np.mean(np.arctan2(np.linalg.norm(NB, axis=0), np.linalg.norm(TB, axis=0))))
        invariant = val >= 1.0 - cluster_tol
        anti = val <= cluster_tol
        Qi = None
        if not invariant:
            U = _orthonormal_columns(NB, len(g))
            Qi = U @ U.T
            Q_sum += Qi
        clusters.append(SlantCluster(val, len(g), P, B, angle, invariant, anti, Qi))
    vals = [c.eigenvalue for c in clusters]
    gaps = [a - b for a, b in zip(vals, vals[1:])]
    min_gap = min(gaps) if gaps else float("inf")
    return SlantDecomposition(
        tuple(clusters),
        np.eye(n_nor) - Q_sum,
        ambiguous=min_gap < GUARD_BAND * cluster_tol,
        min_gap=min_gap,
        cluster_tol=cluster_tol,
    )


def slant_angle(split: PhiSplit, X) -> float:
    """Angle between phi X and the tangent space, for X in tangent-frame coordinates."""
    X = np.asarray(X, dtype=float)
    if not np.linalg.norm(X) > 0:
        raise ValueError("slant angle of the zero vector is undefined")
    # atan2 form stays well conditioned near 0 where arccos(|TX|/|X|) is not
    return float(np.arctan2(np.linalg.norm(split.N @ X), np.linalg.norm(split.T @ X)))


@dataclass(frozen=True)
class PointAnalysis:
    """Frame, split and decomposition bundled for one point."""

    frame: PointFrame
    split: PhiSplit
    decomposition: SlantDecomposition
    extras: dict = field(default_factory=dict)


def analyze_point(jet: Jet2, ambient: HermitianStructure, params=None, cluster_tol: float = CLUSTER_TOL) -> PointAnalysis:
    frame = build_frame(jet, ambient, params)
    split = split_phi(frame, ambient)
    return PointAnalysis(frame, split, detect_distributions(split, frame, ambient, cluster_tol))
