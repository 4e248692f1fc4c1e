"""Closed-form auxiliaries for equatorial timelike Schwarzschild geodesics.

The auxiliary function ``zeta`` encodes the minimum of the effective potential
through the homogeneity relation ``omega0(H, L) = H zeta(L / (sqrt(-H) M))``;
``L_E`` is the angular momentum of the circular orbit of particle energy ``E``
on the unit-mass shell ``H = -1/2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from . import expr as ex
from .errors import DomainError
from .radial import in_lambda_tilde, schw_critical_points, schw_W

U_MIN = 4 * math.sqrt(2)
ZETA_LO = 25 / 27
E_MIN = math.sqrt(25 / 27)

# the variable name r only serves as the expression engine's scalar slot
_ZETA_TEXT = "(r^4 - 20*r^2 + 32 + r*(r^2 - 8)*sqrt(r^2 - 24)) / (r^4 - 18*r^2 + r*(r^2 - 6)*sqrt(r^2 - 24))"


@lru_cache(maxsize=1)
def _zeta_exprs():
    z = ex.parse_expr(_ZETA_TEXT)
    return z, ex.diff_expr(z, "r")


def _check_u(u):
    if not np.all(np.asarray(u) > U_MIN):
        raise DomainError(f"zeta is defined for u > 4*sqrt(2) (got {u})")


def zeta(u):
    """Auxiliary function on ``(4 sqrt 2, inf)`` with range ``(25/27, 1)``."""
    _check_u(u)
    return ex.evaluate(_zeta_exprs()[0], {"r": u})


def zeta_prime(u):
    """Exact derivative of :func:`zeta` (symbolic differentiation of the closed form)."""
    _check_u(u)
    return ex.evaluate(_zeta_exprs()[1], {"r": u})


def zeta_inv(y: float) -> float:
    """Inverse of :func:`zeta` on ``(25/27, 1)`` to relative accuracy ``1e-13``."""
    y = float(y)
    if not ZETA_LO < y < 1:
        raise DomainError(f"zeta_inv needs y in (25/27, 1) (got {y})")

    # bracket in log(u - 4 sqrt 2): zeta rises from 25/27 to 1
    def g(t):
        return zeta(U_MIN + math.exp(t)) - y

    lo, hi = -30.0, 0.0
    while g(hi) < 0:
        hi += 2.0
        if hi > 60:
            raise DomainError(f"zeta_inv: y={y} too close to 1")
    if g(lo) > 0:
        raise DomainError(f"zeta_inv: y={y} too close to 25/27")
    t = brentq(g, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=300)
    u = U_MIN + math.exp(t)
    # Newton polish in u itself
    for _ in range(3):
        du = (zeta(u) - y) / zeta_prime(u)
        if not math.isfinite(du) or u - du <= U_MIN:
            break
        u -= du
        if abs(du) <= 1e-16 * u:
            break
    return u


def _check_E(E):
    if not E_MIN < E < 1:
        raise DomainError(f"particle energy must lie in (sqrt(25/27), 1) (got {E})")


def omega0(H: float, L: float, M: float) -> float:
    """Opposite of the minimum of ``W``: ``H * zeta(L / (sqrt(-H) M))``."""
    if not in_lambda_tilde(H, L, M):
        raise DomainError(f"(H, L) = ({H}, {L}) outside H < 0, L > 4*sqrt(2)*sqrt(-H)*M")
    return H * zeta(L / (math.sqrt(-H) * M))


def omega0_direct(H: float, L: float, M: float) -> float:
    """``-W(r_zero)`` from the closed-form critical point."""
    return -schw_W(schw_critical_points(H, L, M)["r_zero"], H, L, M)


def dL_omega0(H: float, L: float, M: float) -> float:
    """``d omega0 / dL = sqrt(-H) zeta'(L / (sqrt(-H) M)) * H / (sqrt(-H) M)``."""
    s = math.sqrt(-H)
    return H * zeta_prime(L / (s * M)) / (s * M)


def L_E(E: float, M: float) -> float:
    """Circular-orbit angular momentum on ``H = -1/2``: ``M / sqrt 2 * zeta_inv(E^2)``."""
    _check_E(E)
    if not M > 0:
        raise DomainError("mass must be positive")
    return M / math.sqrt(2) * zeta_inv(E * E)


def lambdaE_contains(H: float, L: float, E: float, M: float) -> bool:
    """Membership in the bounded-orbit region of particle energy ``E``."""
    _check_E(E)
    if not -27 * E * E / 50 < H < -E * E / 2:
        return False
    s = math.sqrt(-H)
    return bool(4 * math.sqrt(2) * s * M < L < s * M * zeta_inv(E * E / (-2 * H)))


@dataclass(frozen=True)
class OmegaDerivatives:
    omega2: float
    omega3: float
    omega4: float
    d_omega2_dL: float


def omega_derivs(L: float, M: float) -> OmegaDerivatives:
    """Derivatives of ``Omega`` at ``1/r_zero`` on the shell ``H = -1/2``."""
    x = L / M
    if not x * x > 12:
        raise DomainError(f"need (L/M)^2 > 12 (got {x * x})")
    root = math.sqrt(x * x - 12)
    return OmegaDerivatives(
        omega2=M * M * x * root,
        omega3=-6 * M**3 * x * x,
        omega4=0.0,
        d_omega2_dL=2 * M * (x * x - 6) / root,
    )


def limit_P(E: float, M: float) -> float:
    """Limit of ``P(-1/2, L)`` as ``L`` tends to ``L_E`` from below."""
    return 2 * math.pi / math.sqrt(omega_derivs(L_E(E, M), M).omega2)


def limit_dTheta_dL(E: float, M: float) -> float:
    """Limit of ``dTheta/dL(-1/2, L)`` as ``L`` tends to ``L_E`` from below (negative)."""
    x = L_E(E, M) / M
    w = x * x - 12
    num = 4 * math.sqrt(w) + 5 / math.sqrt(2) * x * x * zeta_prime(math.sqrt(2) * x)
    return -3 * math.pi * num / (M * math.sqrt(x) * w**1.75)


def dense_resonance_scan(E: float, M: float, q_max: int, *, n_grid: int = 200, delta: float | None = None):
    """Resonances ``Theta(-1/2, L) = 2 pi p / q`` with ``q <= q_max`` on ``(4M + d, L_E - d)``.

    Each entry carries ``dTheta/dL``, its error bar and a verdict; entries that
    are not certified non-degenerate are flagged.
    """
    from .model import SystemSpec
    from .timemaps import resonance_scan

    if int(q_max) < 1:
        raise DomainError("q_max must be at least 1")
    spec = SystemSpec.schwarzschild(M, E)
    _check_E(E)
    d = 1e-4 * M if delta is None else delta
    return resonance_scan(spec, -0.5, int(q_max), (4 * M + d, L_E(E, M) - d), n_grid)
