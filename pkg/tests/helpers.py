"""Shared oracles and generators for the test suite."""
from __future__ import annotations

import math

import numpy as np

from apsidal.expr import diff_expr, evaluate, parse_expr

VARS = ("r", "theta", "pr", "ptheta")


def random_expr_text(rng: np.random.Generator, depth: int) -> str:
    """Random infix text whose tree depth is at most ``depth``.

    Functions with restricted domains only receive arguments that are positive
    or bounded away from zero by construction, so every tree evaluates on the
    sampling box of :func:`random_point`.
    """
    if depth <= 1 or rng.random() < 0.2:
        if rng.random() < 0.65:
            return VARS[rng.integers(4)]
        return f"{rng.uniform(-2, 2):.3f}"
    sub = lambda: random_expr_text(rng, depth - 1)  # noqa: E731
    deeper = lambda: random_expr_text(rng, depth - 2)  # noqa: E731
    k = rng.integers(11)
    if k == 0:
        return f"({sub()} + {sub()})"
    if k == 1:
        return f"({sub()} - {sub()})"
    if k == 2:
        return f"({sub()} * {sub()})"
    if k == 3:
        return f"({sub()} / (2.5 + sin({deeper()})))"
    if k == 4:
        return f"({sub()})^{rng.integers(2, 4)}"
    if k == 5:
        return f"(1.5 + cos({deeper()}))^{rng.choice(['0.5', '1.5', '-0.5'])}"
    if k == 6:
        return f"sin({sub()})"
    if k == 7:
        return f"cos({sub()})"
    if k == 8:
        return f"exp(sin({deeper()}))"
    if k == 9:
        return f"log(1.5 + cos({deeper()}))"
    return f"-{sub()}" if rng.random() < 0.5 else f"sqrt(2 + sin({deeper()}))"


def random_point(rng: np.random.Generator) -> dict:
    return {"r": rng.uniform(0.5, 2.0), "theta": rng.uniform(-math.pi, math.pi),
            "pr": rng.uniform(-1.0, 1.0), "ptheta": rng.uniform(0.2, 1.5)}


def richardson_derivative(f, x: float, h: float = 1e-6) -> float:
    """Central difference at steps ``h`` and ``h/2`` combined by Richardson extrapolation."""
    d1 = (f(x + h) - f(x - h)) / (2 * h)
    d2 = (f(x + h / 2) - f(x - h / 2)) / h
    return (4 * d2 - d1) / 3


def derivative_mismatch(text: str, point: dict, var: str) -> float:
    """Relative mismatch between the symbolic derivative and finite differences.

    The denominator includes the function magnitude because rounding in the
    difference quotient scales with ``|f|``.
    """
    e = parse_expr(text)
    exact = evaluate(diff_expr(e, var), point)
    f0 = evaluate(e, point)

    def f(x):
        env = dict(point)
        env[var] = x
        return evaluate(e, env)

    fd = richardson_derivative(f, point[var])
    return abs(fd - exact) / max(abs(exact), abs(f0), 1.0)


def fd_gradient(fun, state, h: float = 1e-6) -> np.ndarray:
    state = np.asarray(state, dtype=float)
    g = np.empty(4)
    for k in range(4):
        step = h * max(1.0, abs(state[k]))

        def f(x, k=k):
            s = state.copy()
            s[k] = x
            return fun(s)

        g[k] = richardson_derivative(f, state[k], step)
    return g


def rel(a: float, b: float) -> float:
    return abs(a - b) / max(abs(b), 1e-300)


def interior_grid(spec, H_values, n_L: int = 5, lo: float = 0.2, hi: float = 0.8):
    """``(H, L)`` pairs with ``L`` spread over the inner part of the bounded-orbit interval."""
    from apsidal.radial import lambda_L_interval

    out = []
    for H in H_values:
        a, b = lambda_L_interval(spec, H)
        for f in np.linspace(lo, hi, n_L):
            out.append((float(H), float(a + f * (b - a))))
    return out
