"""Example immersions into R^{6k} with known slant data, plus small fixtures.

Parameter order is ``(x1, x2, y1, y2, ..., y_{2k-1})``, mapped positionally to
the DSL variables ``x1 .. x_{2k+1}``: ``y_j`` is ``x{j+2}``. Ambient
coordinates are interleaved ``(u1, v1, ..., u_{3k}, v_{3k})``.

Block ``i`` (``2 <= i <= k``) occupies ``u_{3i-2} .. v_{3i}`` and reads, with
``a = y_{2i-2}`` and ``b = y_{2i-1}``::

    pointwise: ((i-1) a, a^2/2, a + b, a - b, (i-1) b, b^2/2)
    kslant:    ((i-1) a, a,     a + b, a - b, (i-1) b, b)
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .ambient import HermitianStructure, standard_structure
from .expr_dsl import ExpressionProgram, constant_program, parse_immersion

KINDS = ("pointwise", "kslant")


@dataclass(frozen=True)
class VectorFieldOnM:
    """Tangent field sum_a X^a(x) d/dx_a with expression coefficients."""

    coefficients: tuple[ExpressionProgram, ...]

    @property
    def arity(self) -> int:
        return self.coefficients[0].arity

    def value(self, x) -> np.ndarray:
        from .expr_dsl import eval_jet2

        return np.array([eval_jet2(p, x).value[0] for p in self.coefficients])

    def jacobian(self, x) -> np.ndarray:
        """(d, d) matrix with entry [c, a] = d X^c / d x_a."""
        from .expr_dsl import eval_jet2

        return np.array([eval_jet2(p, x).jacobian[0] for p in self.coefficients])

    @staticmethod
    def coordinate(a: int, d: int) -> "VectorFieldOnM":
        """The coordinate field d/dx_{a+1} (``a`` zero-based)."""
        return VectorFieldOnM(tuple(constant_program([1.0 if c == a else 0.0], d) for c in range(d)))

    @staticmethod
    def from_sources(sources, d: int) -> "VectorFieldOnM":
        progs = []
        for s in sources:
            p = parse_immersion(s)
            progs.append(ExpressionProgram(d, p.outputs, p.source))
        return VectorFieldOnM(tuple(progs))


@dataclass(frozen=True)
class ExampleFixture:
    name: str
    kind: str  # pointwise | kslant | flat | custom
    k: int
    immersion: ExpressionProgram
    ambient: HermitianStructure
    frames: tuple[VectorFieldOnM, ...] = ()
    expected_assignment: dict[int, int] = field(default_factory=dict)  # frame index -> D index
    constant_angles: bool = False

    @property
    def d(self) -> int:
        return self.immersion.arity

    @property
    def distribution_fields(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for frame_idx, dist in sorted(self.expected_assignment.items()):
            out.setdefault(dist, []).append(frame_idx)
        return out

    def expected_theta(self, i: int, params) -> float:
        y_pair = _y_pair(params, i) if i >= 2 else (0.0, 0.0)
        return expected_theta(self.kind, i, y_pair)


def _fmt_coef(c: int, var: str) -> str:
    return var if c == 1 else f"{c}*{var}"


def immersion_source(kind: str, k: int) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown example kind {kind!r}")
    if k < 2:
        raise ValueError("k must be >= 2")
    d, n = 2 * k + 1, 6 * k
    lines = [
        f"dim {d} -> {n}",
        "domain norm < 1, x1 > 0, x2 > 0",
        "x1*cos(x3)",
        "x2*cos(x3)",
        "x1*sin(x3)",
        "x2*sin(x3)",
        "x1",
        "x2",
    ]
    for i in range(2, k + 1):
        a, b = f"x{2 * i}", f"x{2 * i + 1}"
        sq_a = f"0.5*{a}^2" if kind == "pointwise" else a
        sq_b = f"0.5*{b}^2" if kind == "pointwise" else b
        lines += [_fmt_coef(i - 1, a), sq_a, f"{a} + {b}", f"{a} - {b}", _fmt_coef(i - 1, b), sq_b]
    return "\n".join(lines) + "\n"


def _assignment(k: int) -> dict[int, int]:
    out = {0: 0, 1: 0, 2: 1}
    for i in range(2, k + 1):
        out[2 * i - 1] = i  # X_{2i} is column 2i-1
        out[2 * i] = i
    return out


def _example(kind: str, k: int) -> ExampleFixture:
    prog = parse_immersion(immersion_source(kind, k))
    d = prog.arity
    frames = tuple(VectorFieldOnM.coordinate(a, d) for a in range(d))
    return ExampleFixture(
        f"{kind}:{k}", kind, k, prog, standard_structure(3 * k), frames, _assignment(k), constant_angles=(kind == "kslant")
    )


def pointwise_example(k: int) -> ExampleFixture:
    return _example("pointwise", k)


def kslant_example(k: int) -> ExampleFixture:
    return _example("kslant", k)


def frame_vectors(kind: str, k: int, params) -> np.ndarray:
    """The frame fields X_1..X_{2k+1} as printed, ambient columns (6k, 2k+1)."""
    z = np.asarray(params, dtype=float)
    x1, x2, y1 = z[0], z[1], z[2]
    X = np.zeros((6 * k, 2 * k + 1))

    def u(j):  # 1-based pair index -> row
        return 2 * (j - 1)

    def v(j):
        return 2 * (j - 1) + 1

    c, s = np.cos(y1), np.sin(y1)
    X[u(1), 0], X[u(2), 0], X[u(3), 0] = c, s, 1.0
    X[v(1), 1], X[v(2), 1], X[v(3), 1] = c, s, 1.0
    X[u(1), 2], X[v(1), 2], X[u(2), 2], X[v(2), 2] = -x1 * s, -x2 * s, x1 * c, x2 * c
    for i in range(2, k + 1):
        a, b = z[2 * i - 1], z[2 * i]  # y_{2i-2}, y_{2i-1}
        va = a if kind == "pointwise" else 1.0
        vb = b if kind == "pointwise" else 1.0
        col = 2 * i - 1
        X[u(3 * i - 2), col], X[v(3 * i - 2), col] = i - 1, va
        X[u(3 * i - 1), col], X[v(3 * i - 1), col] = 1.0, 1.0
        col = 2 * i
        X[u(3 * i - 1), col], X[v(3 * i - 1), col] = 1.0, -1.0
        X[u(3 * i), col], X[v(3 * i), col] = i - 1, vb
    return X


def _y_pair(params, i: int) -> tuple[float, float]:
    z = np.asarray(params, dtype=float)
    return float(z[2 * i - 1]), float(z[2 * i])


def expected_cos2(kind: str, i: int, y_pair=(0.0, 0.0)) -> float:
    if i == 0:
        return 1.0
    if i == 1:
        return 0.0
    if i < 0:
        raise IndexError(f"distribution index {i} out of range")
    if kind == "kslant":
        return (2.0 / (3.0 + (i - 1) ** 2)) ** 2
    if kind == "pointwise":
        a, b = y_pair
        base = 2.0 + (i - 1) ** 2
        return 4.0 / ((base + a * a) * (base + b * b))
    raise ValueError(f"unknown example kind {kind!r}")


def expected_theta(kind: str, i: int, y_pair=(0.0, 0.0)) -> float:
    if i == 0:
        return 0.0
    if i == 1:
        return float(np.pi / 2)
    if kind == "kslant":
        return float(np.arccos(2.0 / (3.0 + (i - 1) ** 2)))
    if kind == "pointwise":
        a, b = y_pair
        base = 2.0 + (i - 1) ** 2
        return float(np.arccos(2.0 / np.sqrt((base + a * a) * (base + b * b))))
    return expected_cos2(kind, i, y_pair)  # raises for unknown kinds


def expected_cos2_gradient(kind: str, k: int, i: int, params) -> np.ndarray:
    """Gradient of cos^2(theta_i) in parameter space, by the chain rule."""
    z = np.asarray(params, dtype=float)
    grad = np.zeros(2 * k + 1)
    if kind != "pointwise" or i < 2:
        return grad
    a, b = _y_pair(z, i)
    base = 2.0 + (i - 1) ** 2
    A, B = base + a * a, base + b * b
    grad[2 * i - 1] = -8.0 * a / (A * A * B)
    grad[2 * i] = -8.0 * b / (A * B * B)
    return grad


# --- small fixtures ---------------------------------------------------------


def flat_invariant_fixture() -> ExampleFixture:
    """Totally geodesic phi-invariant R^4 inside R^6."""
    prog = parse_immersion("dim 4 -> 6\nx1\nx2\nx3\nx4\n0\n0\n")
    frames = tuple(VectorFieldOnM.coordinate(a, 4) for a in range(4))
    return ExampleFixture("flat", "flat", 0, prog, standard_structure(3), frames, {a: 0 for a in range(4)}, True)


def anti_invariant_line() -> ExampleFixture:
    prog = parse_immersion("dim 1 -> 2\nx1\n0\n")
    frames = (VectorFieldOnM.coordinate(0, 1),)
    return ExampleFixture("line", "flat", 0, prog, standard_structure(1), frames, {0: 1}, True)


def flat_slant_fixture() -> ExampleFixture:
    """Totally geodesic 1-slant submanifold with an invariant plane (angle pi/3)."""
    prog = parse_immersion("dim 4 -> 8\nx1\nx2\nx3\nx3\nx3 + x4\nx3 - x4\nx4\nx4\n")
    frames = tuple(VectorFieldOnM.coordinate(a, 4) for a in range(4))
    return ExampleFixture("flatslant", "flat", 0, prog, standard_structure(4), frames, {0: 0, 1: 0, 2: 1, 3: 1}, True)


FIXTURES = {
    "flat": flat_invariant_fixture,
    "line": anti_invariant_line,
    "flatslant": flat_slant_fixture,
}


def catalog_inventory() -> list[tuple[str, str]]:
    return [
        ("pointwise:<k>", "pointwise k-slant immersion into R^{6k} (k >= 2), slant functions vary"),
        ("kslant:<k>", "k-slant immersion into R^{6k} (k >= 2), constant angles arccos 2/(3+(i-1)^2)"),
        ("flat", "totally geodesic phi-invariant R^4 in R^6"),
        ("flatslant", "totally geodesic plane + slant plane (angle pi/3) in R^8"),
        ("line", "anti-invariant line in R^2"),
    ]


def resolve(target: str, k: int | None = None) -> ExampleFixture:
    """Look up ``pointwise:k``, ``kslant:k`` or a named fixture."""
    name, _, kpart = target.partition(":")
    if name in KINDS:
        kk = int(kpart) if kpart else k
        if kk is None:
            raise ValueError(f"{name} needs k, e.g. {name}:2")
        return pointwise_example(kk) if name == "pointwise" else kslant_example(kk)
    if name in FIXTURES and not kpart:
        return FIXTURES[name]()
    raise KeyError(f"unknown catalog target {target!r}")


def custom_fixture(prog: ExpressionProgram, ambient: HermitianStructure | None = None, name: str = "custom") -> ExampleFixture:
    if ambient is None:
        if prog.n_outputs % 2:
            raise ValueError("immersion must have an even number of outputs for the standard structure")
        ambient = standard_structure(prog.n_outputs // 2)
    return ExampleFixture(name, "custom", 0, prog, ambient)
