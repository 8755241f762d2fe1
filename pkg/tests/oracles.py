"""Reference computations that share no code with the jet evaluator or the geometry modules."""

from __future__ import annotations

import math

import numpy as np

from slantlab.expr_dsl import BinOp, Call, Const, Neg, Pow, Var

_FUNCS = {"sin": math.sin, "cos": math.cos, "exp": math.exp, "sqrt": math.sqrt}


def eval_tree(node, x) -> float:
    """Plain scalar interpreter of an expression tree."""
    if isinstance(node, Const):
        return float(node.value)
    if isinstance(node, Var):
        return float(x[node.index - 1])
    if isinstance(node, Neg):
        return -eval_tree(node.arg, x)
    if isinstance(node, Pow):
        return eval_tree(node.base, x) ** node.exponent
    if isinstance(node, Call):
        return _FUNCS[node.func](eval_tree(node.arg, x))
    if isinstance(node, BinOp):
        a, b = eval_tree(node.left, x), eval_tree(node.right, x)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        return a / b
    raise TypeError(node)


def immersion_value(prog, x) -> np.ndarray:
    return np.array([eval_tree(t, x) for t in prog.outputs])


def fd_jacobian(fn, x, step=1e-4) -> np.ndarray:
    """Richardson-extrapolated central differences, columns = partial derivatives."""
    x = np.asarray(x, dtype=float)
    cols = []
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = 1.0
        d1 = (fn(x + step * e) - fn(x - step * e)) / (2 * step)
        d2 = (fn(x + step / 2 * e) - fn(x - step / 2 * e)) / step
        cols.append((4 * d2 - d1) / 3)
    return np.stack(cols, axis=-1)


def fd_hessian(fn, x, step=1e-3) -> np.ndarray:
    """Second differences (Richardson), shape (n_out, d, d)."""
    x = np.asarray(x, dtype=float)
    d = x.size
    f0 = fn(x)
    out = np.zeros((f0.size, d, d))

    def second(a, b, s):
        ea = np.zeros(d)
        eb = np.zeros(d)
        ea[a] = s
        eb[b] = s
        if a == b:
            return (fn(x + ea) - 2 * f0 + fn(x - ea)) / s**2
        return (fn(x + ea + eb) - fn(x + ea - eb) - fn(x - ea + eb) + fn(x - ea - eb)) / (4 * s * s)

    for a in range(d):
        for b in range(a, d):
            val = (4 * second(a, b, step / 2) - second(a, b, step)) / 3
            out[:, a, b] = out[:, b, a] = val
    return out


def christoffel_from_metric(prog, x, step=1e-4) -> np.ndarray:
    """Gamma^c_ab = 1/2 g^{cd} (d_a g_bd + d_b g_ad - d_d g_ab) with the metric from oracle jacobians."""
    f = lambda p: immersion_value(prog, p)

    def metric(p):
        J = fd_jacobian(f, p, 1e-4)
        return J.T @ J

    g = metric(x)
    dg = fd_jacobian(lambda p: metric(p).ravel(), x, step).reshape(g.shape[0], g.shape[1], -1)  # [b, d, a]
    d = g.shape[0]
    gamma = np.zeros((d, d, d))
    ginv = np.linalg.inv(g)
    for a in range(d):
        for b in range(d):
            low = np.array([0.5 * (dg[b, e, a] + dg[a, e, b] - dg[a, b, e]) for e in range(d)])
            gamma[:, a, b] = ginv @ low
    return gamma


def second_fundamental_form_oracle(prog, x) -> np.ndarray:
    """Normal part of the oracle Hessian, ambient vectors (n, d, d)."""
    f = lambda p: immersion_value(prog, p)
    J = fd_jacobian(f, x)
    Q, _ = np.linalg.qr(J)
    PN = np.eye(J.shape[0]) - Q @ Q.T
    return np.einsum("ij,jab->iab", PN, fd_hessian(f, x))
