"""Immersion expression language and exact second-order jets.

A program is a list of scalar expression trees in the parameters ``x1..xd``.
Evaluation propagates truncated second-order Taylor data (value, gradient,
Hessian) through every node, so first and second derivatives are exact up to
round-off.

File format::

    dim 5 -> 12
    domain norm < 1, x1 > 0, x2 > 0
    x1*cos(x3)
    ...

A bare list of expressions (one per line, no header) is also accepted; the
arity is then the highest variable index referenced.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

import numpy as np

FUNCTIONS = ("sin", "cos", "exp", "sqrt")


class ExprSyntaxError(ValueError):
    def __init__(self, message: str, offset: int, line: int | None = None):
        self.offset = offset
        self.line = line
        where = f"offset {offset}" if line is None else f"line {line}, offset {offset}"
        super().__init__(f"{message} at {where}")


class UnknownIdentifierError(ExprSyntaxError):
    pass


class DomainViolation(ArithmeticError):
    """Division by zero or sqrt outside its domain during jet evaluation."""

    def __init__(self, message: str, output_index: int):
        self.output_index = output_index
        super().__init__(f"{message} in output {output_index}")


# --- expression trees -------------------------------------------------------


@dataclass(frozen=True)
class Const:
    value: float


@dataclass(frozen=True)
class Var:
    index: int  # 1-based


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Pow:
    base: "Node"
    exponent: int


@dataclass(frozen=True)
class Call:
    func: str
    arg: "Node"


Node = Union[Const, Var, Neg, BinOp, Pow, Call]


def max_var_index(node: Node) -> int:
    if isinstance(node, Var):
        return node.index
    if isinstance(node, Const):
        return 0
    if isinstance(node, (Neg, Call)):
        return max_var_index(node.arg)
    if isinstance(node, Pow):
        return max_var_index(node.base)
    return max(max_var_index(node.left), max_var_index(node.right))


def has_division(node: Node) -> bool:
    if isinstance(node, (Const, Var)):
        return False
    if isinstance(node, BinOp):
        return node.op == "/" or has_division(node.left) or has_division(node.right)
    if isinstance(node, Pow):
        return node.exponent < 0 or has_division(node.base)
    if isinstance(node, Call):
        return node.func == "sqrt" or has_division(node.arg)
    return has_division(node.arg)


def to_source(node: Node) -> str:
    """Serialize a tree; ``parse_expression(to_source(t)) == t``."""
    if isinstance(node, Const):
        return repr(float(node.value))
    if isinstance(node, Var):
        return f"x{node.index}"
    if isinstance(node, Neg):
        return f"(-{to_source(node.arg)})"
    if isinstance(node, BinOp):
        return f"({to_source(node.left)} {node.op} {to_source(node.right)})"
    if isinstance(node, Pow):
        exp = str(node.exponent) if node.exponent >= 0 else f"(-{-node.exponent})"
        return f"({to_source(node.base)}^{exp})"
    return f"{node.func}({to_source(node.arg)})"


# --- parsing ----------------------------------------------------------------

_TOKEN = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<name>[A-Za-z_][A-Za-z_0-9]*)|(?P<op>[-+*/^(),]))"
)
_VAR = re.compile(r"x([1-9]\d*)$")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        if text[pos:].strip() == "":
            break
        m = _TOKEN.match(text, pos)
        if m is None or m.end() == pos:
            stripped = len(text) - len(text[pos:].lstrip())
            raise ExprSyntaxError(f"unexpected character {text[stripped]!r}", stripped)
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("eof", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect(self, value: str):
        kind, val, off = self.take()
        if val != value or kind == "eof":
            raise ExprSyntaxError(f"expected {value!r}", off)

    def parse(self) -> Node:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "eof":
            raise ExprSyntaxError(f"unexpected token {val!r}", off)
        return node

    def expr(self) -> Node:
        node = self.term()
        while self.peek()[1] in ("+", "-") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while self.peek()[1] in ("*", "/") and self.peek()[0] == "op":
            op = self.take()[1]
            node = BinOp(op, node, self.unary())
        return node

    def unary(self) -> Node:
        if self.peek()[0] == "op" and self.peek()[1] == "-":
            self.take()
            return Neg(self.unary())
        if self.peek()[0] == "op" and self.peek()[1] == "+":
            self.take()
            return self.unary()
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        if self.peek()[0] == "op" and self.peek()[1] == "^":
            off = self.take()[2]
            exponent = self._integer_exponent(self.unary(), off)
            return Pow(base, exponent)
        return base

    @staticmethod
    def _integer_exponent(node: Node, off: int) -> int:
        sign = 1
        while isinstance(node, Neg):
            sign, node = -sign, node.arg
        if isinstance(node, Const) and float(node.value).is_integer():
            return sign * int(node.value)
        raise ExprSyntaxError("exponent must be an integer literal", off)

    def atom(self) -> Node:
        kind, val, off = self.take()
        if kind == "num":
            return Const(float(val))
        if kind == "name":
            if val in FUNCTIONS:
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return Call(val, arg)
            m = _VAR.match(val)
            if m:
                return Var(int(m.group(1)))
            raise UnknownIdentifierError(f"unknown identifier {val!r}", off)
        if kind == "op" and val == "(":
            node = self.expr()
            self.expect(")")
            return node
        if kind == "eof":
            raise ExprSyntaxError("unexpected end of input", off)
        raise ExprSyntaxError(f"unexpected token {val!r}", off)


def parse_expression(text: str) -> Node:
    return _Parser(text).parse()


# --- domain predicates ------------------------------------------------------


@dataclass(frozen=True)
class DomainPredicate:
    """``norm < bound`` (index None) or ``x<index> > bound`` / ``x<index> < bound``."""

    index: int | None
    relation: str
    bound: float

    def holds(self, x: np.ndarray, margin: float = 0.0) -> bool:
        if self.index is None:
            return float(np.linalg.norm(x)) < self.bound - margin
        v = float(x[self.index - 1])
        if self.relation == ">":
            return v > self.bound + margin
        return v < self.bound - margin

    def __str__(self) -> str:
        lhs = "norm" if self.index is None else f"x{self.index}"
        return f"{lhs} {self.relation} {self.bound:g}"


_PRED = re.compile(r"^\s*(norm|x[1-9]\d*)\s*([<>])\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)\s*$")


def parse_domain(text: str) -> tuple[DomainPredicate, ...]:
    preds = []
    for part in text.split(","):
        m = _PRED.match(part)
        if m is None:
            raise ExprSyntaxError(f"bad domain predicate {part.strip()!r}", 0)
        lhs, rel, bound = m.groups()
        if lhs == "norm":
            if rel != "<":
                raise ExprSyntaxError("norm predicate must be 'norm < c'", 0)
            preds.append(DomainPredicate(None, "<", float(bound)))
        else:
            preds.append(DomainPredicate(int(lhs[1:]), rel, float(bound)))
    return tuple(preds)


# --- programs ---------------------------------------------------------------


@dataclass(frozen=True)
class ExpressionProgram:
    arity: int
    outputs: tuple[Node, ...]
    source: str = ""
    domain: tuple[DomainPredicate, ...] = ()

    @property
    def n_outputs(self) -> int:
        return len(self.outputs)

    def in_domain(self, x, margin: float = 0.0) -> bool:
        x = np.asarray(x, dtype=float)
        return all(p.holds(x, margin) for p in self.domain)

    def to_source(self) -> str:
        lines = [f"dim {self.arity} -> {self.n_outputs}"]
        if self.domain:
            lines.append("domain " + ", ".join(str(p) for p in self.domain))
        lines.extend(to_source(t) for t in self.outputs)
        return "\n".join(lines) + "\n"

    def __call__(self, x) -> np.ndarray:
        return eval_jet2(self, x).value


_HEADER = re.compile(r"^dim\s+(\d+)\s*->\s*(\d+)\s*$")


def parse_immersion(source: str) -> ExpressionProgram:
    if not source or not source.strip():
        raise ExprSyntaxError("empty source", 0)
    arity = n_out = None
    domain: tuple[DomainPredicate, ...] = ()
    outputs = []
    line_start = 0
    for lineno, raw in enumerate(source.splitlines(keepends=True), start=1):
        base = line_start
        line_start += len(raw)
        text = raw.split("#", 1)[0].rstrip("\r\n")
        if not text.strip():
            continue
        stripped = text.strip()
        if arity is None and not outputs and stripped.startswith("dim"):
            m = _HEADER.match(stripped)
            if m is None:
                raise ExprSyntaxError("malformed header, expected 'dim <d> -> <n>'", base, lineno)
            arity, n_out = int(m.group(1)), int(m.group(2))
            continue
        if not outputs and stripped.startswith("domain"):
            domain = parse_domain(stripped[len("domain"):])
            continue
        try:
            outputs.append(parse_expression(text))
        except ExprSyntaxError as exc:
            raise type(exc)(str(exc).rsplit(" at ", 1)[0], base + exc.offset, lineno) from None
    if not outputs:
        raise ExprSyntaxError("no output expressions", len(source))
    used = max(max_var_index(t) for t in outputs)
    if arity is None:
        arity = used
    elif used > arity:
        raise ExprSyntaxError(f"variable x{used} exceeds declared arity {arity}", 0)
    if n_out is not None and n_out != len(outputs):
        raise ExprSyntaxError(f"header declares {n_out} outputs, found {len(outputs)}", len(source))
    for p in domain:
        if p.index is not None and p.index > arity:
            raise ExprSyntaxError(f"domain predicate references x{p.index} beyond arity", 0)
    return ExpressionProgram(max(arity, 1), tuple(outputs), source, domain)


def load_immersion(path) -> ExpressionProgram:
    with open(path, encoding="utf-8") as fh:
        return parse_immersion(fh.read())


# --- jets -------------------------------------------------------------------


@dataclass(frozen=True)
class Jet2:
    value: np.ndarray  # (n,)
    jacobian: np.ndarray  # (n, d)
    hessian: np.ndarray  # (n, d, d)


class _J:
    """Batched truncated Taylor data: val (B,), grad (B,d), hess (B,d,d)."""

    __slots__ = ("v", "g", "h")

    def __init__(self, v, g, h):
        self.v, self.g, self.h = v, g, h


def _outer(a, b):
    return a[:, :, None] * b[:, None, :]


def _chain(a: _J, f0, f1, f2) -> _J:
    # f(a) with f', f'' evaluated at a.v
    return _J(f0, f1[:, None] * a.g, f1[:, None, None] * a.h + f2[:, None, None] * _outer(a.g, a.g))


class _Evaluator:
    def __init__(self, X: np.ndarray):
        self.X = X
        B, d = X.shape
        self.B, self.d = B, d
        self.zero_g = np.zeros((B, d))
        self.zero_h = np.zeros((B, d, d))
        self.bad = np.zeros(B, dtype=bool)
        self.reason = ""

    def flag(self, mask, reason):
        if np.any(mask):
            if not self.reason:
                self.reason = reason
            self.bad |= mask

    def const(self, c):
        return _J(np.full(self.B, c), self.zero_g, self.zero_h)

    def run(self, node: Node) -> _J:
        if isinstance(node, Const):
            return self.const(node.value)
        if isinstance(node, Var):
            g = np.zeros((self.B, self.d))
            g[:, node.index - 1] = 1.0
            return _J(self.X[:, node.index - 1].copy(), g, self.zero_h)
        if isinstance(node, Neg):
            a = self.run(node.arg)
            return _J(-a.v, -a.g, -a.h)
        if isinstance(node, BinOp):
            a, b = self.run(node.left), self.run(node.right)
            if node.op == "+":
                return _J(a.v + b.v, a.g + b.g, a.h + b.h)
            if node.op == "-":
                return _J(a.v - b.v, a.g - b.g, a.h - b.h)
            if node.op == "/":
                b = self._reciprocal(b)
            return _J(
                a.v * b.v,
                a.v[:, None] * b.g + b.v[:, None] * a.g,
                a.v[:, None, None] * b.h + b.v[:, None, None] * a.h + _outer(a.g, b.g) + _outer(b.g, a.g),
            )
        if isinstance(node, Pow):
            return self._power(self.run(node.base), node.exponent)
        a = self.run(node.arg)
        if node.func == "sin":
            s, c = np.sin(a.v), np.cos(a.v)
            return _chain(a, s, c, -s)
        if node.func == "cos":
            s, c = np.sin(a.v), np.cos(a.v)
            return _chain(a, c, -s, -c)
        if node.func == "exp":
            e = np.exp(a.v)
            return _chain(a, e, e, e)
        # sqrt: derivatives blow up at 0, so the domain is the open half-line
        self.flag(~(a.v > 0), "sqrt of non-positive value")
        with np.errstate(all="ignore"):
            r = np.sqrt(a.v)
            return _chain(a, r, 0.5 / r, -0.25 / (r * a.v))

    def _reciprocal(self, b: _J) -> _J:
        self.flag(b.v == 0, "division by zero")
        with np.errstate(all="ignore"):
            inv = 1.0 / b.v
            return _chain(b, inv, -inv * inv, 2.0 * inv * inv * inv)

    def _power(self, a: _J, n: int) -> _J:
        if n == 0:
            return self.const(1.0)
        if n == 1:
            return a
        if n < 0:
            return self._power(self._reciprocal(a), -n)
        f0 = a.v**n
        f1 = n * a.v ** (n - 1)
        f2 = n * (n - 1) * a.v ** (n - 2) if n >= 2 else np.zeros_like(a.v)
        return _chain(a, f0, f1, f2)


def eval_jet2_batch(prog: ExpressionProgram, X) -> tuple[Jet2, np.ndarray]:
    """Evaluate jets at many points at once.

    Returns the stacked jet (value (B,n), jacobian (B,n,d), hessian (B,n,d,d))
    and a boolean mask of points where some output left its domain.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != prog.arity:
        raise ValueError(f"expected points of length {prog.arity}, got {X.shape[1]}")
    B, d = X.shape
    n = prog.n_outputs
    val = np.empty((B, n))
    jac = np.empty((B, n, d))
    hes = np.empty((B, n, d, d))
    bad = np.zeros(B, dtype=bool)
    # out-of-domain points are reported through ``bad``; their nan/inf values are not warnings
    with np.errstate(all="ignore"):
        for k, tree in enumerate(prog.outputs):
            ev = _Evaluator(X)
            j = ev.run(tree)
            val[:, k], jac[:, k], hes[:, k] = j.v, j.g, j.h
            bad |= ev.bad
    return Jet2(val, jac, hes), bad


def eval_jet2(prog: ExpressionProgram, x) -> Jet2:
    x = np.asarray(x, dtype=float).reshape(1, -1)
    if x.shape[1] != prog.arity:
        raise ValueError(f"expected a point of length {prog.arity}, got {x.shape[1]}")
    out = []
    for k, tree in enumerate(prog.outputs):
        ev = _Evaluator(x)
        j = ev.run(tree)
        if ev.bad[0]:
            raise DomainViolation(ev.reason, k)
        out.append(j)
    return Jet2(
        np.array([j.v[0] for j in out]),
        np.array([j.g[0] for j in out]).reshape(len(out), prog.arity),
        np.array([j.h[0] for j in out]).reshape(len(out), prog.arity, prog.arity),
    )


def finite_difference_jacobian(fn, x, step: float = 1e-4) -> np.ndarray:
    """Central differences of a vector function; columns are parameter directions."""
    x = np.asarray(x, dtype=float)
    cols = []
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def constant_program(values, arity: int) -> ExpressionProgram:
    outs = tuple(Const(float(v)) if v >= 0 else Neg(Const(float(-v))) for v in values)
    return ExpressionProgram(arity, outs, "\n".join(to_source(t) for t in outs))


__all__ = [
    "BinOp",
    "Call",
    "Const",
    "DomainPredicate",
    "DomainViolation",
    "ExprSyntaxError",
    "ExpressionProgram",
    "Jet2",
    "Neg",
    "Pow",
    "UnknownIdentifierError",
    "Var",
    "constant_program",
    "eval_jet2",
    "eval_jet2_batch",
    "finite_difference_jacobian",
    "has_division",
    "load_immersion",
    "parse_domain",
    "parse_expression",
    "parse_immersion",
    "to_source",
]
