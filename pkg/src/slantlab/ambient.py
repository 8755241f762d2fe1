"""Flat almost Hermitian (Kähler) ambient structures on R^{2m}.

Coordinates are interleaved ``(u1, v1, u2, v2, ...)``. Because the metric and
the complex structure are constant in these coordinates, the ambient
Levi-Civita derivative of ``phi`` vanishes identically; nothing downstream
needs to check it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

STRUCTURE_TOL = 1e-12


class StructureError(ValueError):
    pass


@dataclass(frozen=True)
class HermitianStructure:
    dim: int
    metric: np.ndarray
    phi: np.ndarray

    @property
    def m(self) -> int:
        return self.dim // 2


@dataclass(frozen=True)
class StructureResiduals:
    phi_squared: float  # max |phi^2 + I|
    isometry: float  # max |phi^T g phi - g|

    def ok(self, tol: float = STRUCTURE_TOL) -> bool:
        return self.phi_squared <= tol and self.isometry <= tol


def standard_structure(m: int) -> HermitianStructure:
    if m < 1:
        raise ValueError("m must be >= 1")
    n = 2 * m
    phi = np.zeros((n, n))
    for i in range(m):
        u, v = 2 * i, 2 * i + 1
        phi[v, u] = -1.0  # phi(e_u) = -e_v
        phi[u, v] = 1.0  # phi(e_v) = e_u
    return HermitianStructure(n, np.eye(n), phi)


def validate_structure(s: HermitianStructure) -> StructureResiduals:
    phi = np.asarray(s.phi, dtype=float)
    g = np.asarray(s.metric, dtype=float)
    n = s.dim
    if phi.shape != (n, n) or g.shape != (n, n):
        raise StructureError(f"expected {n}x{n} matrices, got phi {phi.shape}, metric {g.shape}")
    r1 = np.max(np.abs(phi @ phi + np.eye(n)))
    r2 = np.max(np.abs(phi.T @ g @ phi - g))
    return StructureResiduals(float(r1), float(r2))


def structure_from_matrix(phi, tol: float = STRUCTURE_TOL) -> HermitianStructure:
    phi = np.asarray(phi, dtype=float)
    if phi.ndim != 2 or phi.shape[0] != phi.shape[1] or phi.shape[0] % 2:
        raise StructureError(f"phi must be a square matrix of even size, got shape {phi.shape}")
    s = HermitianStructure(phi.shape[0], np.eye(phi.shape[0]), phi)
    res = validate_structure(s)
    if not res.ok(tol):
        raise StructureError(
            f"not an almost Hermitian structure: |phi^2+I|={res.phi_squared:.3e}, "
            f"|phi^T g phi - g|={res.isometry:.3e}"
        )
    return s


def load_structure_matrix(path) -> HermitianStructure:
    """Read a whitespace-separated row-major 2m x 2m matrix."""
    rows = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.split("#", 1)[0].strip()
            if line:
                rows.append([float(t) for t in line.split()])
    if not rows or any(len(r) != len(rows) for r in rows):
        raise StructureError(f"{path}: expected a square matrix")
    return structure_from_matrix(np.array(rows))


def parse_ambient(text: str, base_dir=None) -> HermitianStructure:
    """``standard <m>`` or ``matrix <path>`` (the config-line form)."""
    parts = text.split()
    if parts and parts[0] == "ambient":
        parts = parts[1:]
    if len(parts) == 2 and parts[0] == "standard":
        return standard_structure(int(parts[1]))
    if len(parts) == 2 and parts[0] == "matrix":
        from pathlib import Path

        path = Path(parts[1])
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return load_structure_matrix(path)
    raise StructureError(f"bad ambient descriptor {text!r}; expected 'standard <m>' or 'matrix <path>'")
