"""Truncated Taylor arithmetic for derivatives of ``Z(1/u)``.

Derivatives in the reciprocal radius ``u = 1/r`` are obtained by composing the
Taylor expansion of ``r(u) = 1/u`` with the closed-form radial derivatives of
``alpha`` and ``V``; no finite differences are involved.
"""
from __future__ import annotations

import math

import numpy as np

from .model import SystemSpec


def tmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Product of two truncated series stored along axis 0."""
    n = a.shape[0]
    out = np.zeros(np.broadcast_shapes(a.shape, b.shape))
    for k in range(n):
        out[k] = sum(a[j] * b[k - j] for j in range(k + 1))
    return out


def compose(derivs, inner: np.ndarray) -> np.ndarray:
    """Series of ``f(g(u + t))`` given ``f^(j)(g(u))`` and the series of ``g``."""
    n = inner.shape[0]
    rho = inner.copy()
    rho[0] = 0.0
    out = np.zeros_like(inner)
    power = np.zeros_like(inner)
    power[0] = 1.0
    for j in range(n):
        out += derivs[j] / math.factorial(j) * power
        power = tmul(power, rho)
    return out


def z_of_u_derivatives(spec: SystemSpec, u, H: float, L: float, order: int) -> np.ndarray:
    """``d^k/du^k Z(1/u; H, L)`` for ``k = 0..order``; shape ``(order + 1,) + u.shape``."""
    u = np.asarray(u, dtype=float)
    n = order + 1
    r_ser = np.empty((n,) + u.shape)
    for k in range(n):
        r_ser[k] = (-1.0) ** k * u ** (-k - 1.0)
    al, V = spec.derivatives(1.0 / u, order)
    al = [np.broadcast_to(np.asarray(x, dtype=float), u.shape) for x in al]
    V = [np.broadcast_to(np.asarray(x, dtype=float), u.shape) for x in V]
    a_ser = compose(al, r_ser)
    v_ser = compose(V, r_ser)
    k_ser = -v_ser
    k_ser[0] += 0.5 * L * L * u * u - H
    if n > 1:
        k_ser[1] += L * L * u
    if n > 2:
        k_ser[2] += 0.5 * L * L
    z = tmul(k_ser, a_ser)
    for k in range(n):
        z[k] *= math.factorial(k)
    return z


def dL_z_of_u(spec: SystemSpec, u, L: float, order: int) -> np.ndarray:
    """``d^k/du^k`` of ``dZ(1/u)/dL = L u^2 alpha(1/u)`` for ``k = 0..order``."""
    u = np.asarray(u, dtype=float)
    n = order + 1
    r_ser = np.empty((n,) + u.shape)
    for k in range(n):
        r_ser[k] = (-1.0) ** k * u ** (-k - 1.0)
    al, _ = spec.derivatives(1.0 / u, order)
    al = [np.broadcast_to(np.asarray(x, dtype=float), u.shape) for x in al]
    a_ser = compose(al, r_ser)
    u2 = np.zeros((n,) + u.shape)
    u2[0] = u * u
    if n > 1:
        u2[1] = 2 * u
    if n > 2:
        u2[2] = 1.0
    out = L * tmul(u2, a_ser)
    for k in range(n):
        out[k] *= math.factorial(k)
    return out
