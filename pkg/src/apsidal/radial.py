"""Effective potentials, turning points and the bounded-orbit hypothesis.

For fixed energy ``H`` and angular momentum ``L`` the radial motion is governed
by ``Z(r) = (L^2 / (2 r^2) - V(r) - H) * alpha(r)``; the orbit oscillates
between the two zeros ``r_minus < r_plus`` of ``Z`` that enclose its minimum
``r_zero``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import DomainError, NoBoundedOrbit, StarViolation
from .model import SystemSpec

ROOT_RTOL = 1e-14
CIRCULAR_TOL = 1e-12
_SCAN_POINTS = 4001


@dataclass(frozen=True)
class OrbitParams:
    H: float
    L: float

    def __post_init__(self):
        if not self.L > 0:
            raise DomainError(f"angular momentum must satisfy L > 0 (got L={self.L})")


@dataclass(frozen=True)
class TurningPoints:
    """Turning points ``r_minus < r_zero < r_plus`` and the hypothesis report."""

    r_minus: float
    r_zero: float
    r_plus: float
    star_ok: bool
    report: dict = field(default_factory=dict, compare=False)

    @property
    def width(self) -> float:
        return self.r_plus - self.r_minus


def _check_L(L):
    if not L > 0:
        raise DomainError(f"angular momentum must satisfy L > 0 (got L={L})")


def effective_Z(spec: SystemSpec, r, H: float, L: float):
    """``(L^2/(2 r^2) - V(r) - H) * alpha(r)``."""
    a, _, V, _ = spec.eval(r)
    return (0.5 * L * L / (r * r) - V - H) * a


def effective_Z_tilde(spec: SystemSpec, r, H: float, L: float):
    """``Z / alpha^2``; shares its zeros with :func:`effective_Z`."""
    a, _, V, _ = spec.eval(r)
    if np.any(np.asarray(a) == 0):
        raise ZeroDivisionError("alpha vanishes (Schwarzschild horizon)")
    return (0.5 * L * L / (r * r) - V - H) / a


def Z_derivatives(spec: SystemSpec, r, H: float, L: float, order: int = 2):
    """``[Z, Z', ..., Z^(order)]`` with respect to ``r`` (``order <= 3``)."""
    al, V = spec.derivatives(r, order)
    # K(r) = L^2 / (2 r^2) - V(r) - H and its derivatives
    K = [0.5 * L * L / r**2 - V[0] - H]
    for k in range(1, order + 1):
        coeff = 0.5 * L * L * math.prod(-2 - j for j in range(k))
        K.append(coeff * r ** (-2.0 - k) - V[k])
    out = []
    for n in range(order + 1):
        out.append(sum(math.comb(n, k) * K[k] * al[n - k] for k in range(n + 1)))
    return out


# -- Schwarzschild -----------------------------------------------------------------------


def schw_W(r, H: float, L: float, M: float):
    """``(L^2/r^2 - 2H) * (1 - 2M/r) / 2``; equals ``Z + E^2/2``."""
    r = np.asarray(r, dtype=float) if np.ndim(r) else float(r)
    if np.any(np.asarray(r) <= 2 * M):
        raise DomainError(f"radius must exceed the horizon 2M = {2 * M}")
    return 0.5 * (L * L / (r * r) - 2 * H) * (1 - 2 * M / r)


def schw_W_prime(r, H: float, L: float, M: float):
    return -L * L / r**3 * (1 - 2 * M / r) + 0.5 * (L * L / (r * r) - 2 * H) * 2 * M / (r * r)


def in_lambda_tilde(H: float, L: float, M: float) -> bool:
    return H < 0 and L > 4 * math.sqrt(2) * math.sqrt(-H) * M


def schw_critical_points(H: float, L: float, M: float) -> dict:
    """Closed-form critical points ``r_star`` (maximum) and ``r_zero`` (minimum) of ``W``."""
    _check_L(L)
    if not M > 0:
        raise DomainError("mass must be positive")
    if not H < 0:
        raise DomainError(f"critical points need H < 0 (got H={H})")
    disc = L * L + 24 * H * M * M
    if disc <= 0 or not in_lambda_tilde(H, L, M):
        raise DomainError(
            f"(H, L) = ({H}, {L}) outside the region H < 0, L > 4*sqrt(2)*sqrt(-H)*M = "
            f"{4 * math.sqrt(2) * math.sqrt(-H) * M:.17g}"
        )
    s = L * math.sqrt(disc)
    den = -4 * H * M
    # r_star via the product of the roots avoids cancellation in L^2 - s
    r_zero = (L * L + s) / den
    r_star = (3 * L * L / (-2 * H)) / r_zero
    return {"r_star": r_star, "r_zero": r_zero}


# -- turning points ----------------------------------------------------------------------


def _brent(f, a, b, scale):
    return brentq(f, a, b, xtol=1e-15 * scale, rtol=ROOT_RTOL, maxiter=500)


def _scan_grid(spec: SystemSpec) -> np.ndarray:
    lo, hi = spec.domain
    a = max(lo, 0.0)
    if math.isfinite(hi):
        t = np.linspace(0.0, 1.0, _SCAN_POINTS)[1:-1]
        if a > 0:
            return a * (hi / a) ** t
        return hi * np.logspace(-8, 0, _SCAN_POINTS)[:-1]
    if a > 0:
        return a * (1 + np.logspace(-8, 8, _SCAN_POINTS))
    return np.logspace(-8, 8, _SCAN_POINTS)


def locate_minimum(spec: SystemSpec, H: float, L: float) -> float:
    """Interior minimum of ``Z``: closed form for Schwarzschild, log-spaced scan otherwise."""
    if spec.family == "schwarzschild":
        try:
            return schw_critical_points(H, L, spec.M)["r_zero"]
        except DomainError as err:
            raise NoBoundedOrbit(str(err)) from None
    r = _scan_grid(spec)
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        z = np.asarray(effective_Z(spec, r, H, L), dtype=float)
    z = np.where(np.isfinite(z), z, np.inf)
    idx = np.nonzero((z[1:-1] < z[:-2]) & (z[1:-1] <= z[2:]) & (z[1:-1] < 0))[0] + 1
    if idx.size == 0:
        raise NoBoundedOrbit(f"no interior minimum of the effective potential with Z < 0 at H={H}, L={L}")
    i = idx[np.argmin(z[idx])]

    def dz(x):
        return Z_derivatives(spec, x, H, L, 1)[1]

    a, b = r[i - 1], r[i + 1]
    if dz(a) < 0 < dz(b):
        return _brent(dz, a, b, r[i])
    return float(r[i])


def _expand(spec, zf, start, direction):
    """Walk away from ``start`` geometrically until ``Z > 0``; return the bracket end."""
    lo, hi = spec.domain
    prev = start
    for k in range(1, 200):
        if direction < 0:
            x = lo + (start - lo) * 2.0**-k if lo > 0 else start * 2.0**-k
            if x <= lo or x == prev:
                break
        else:
            x = start * 2.0**k if not math.isfinite(hi) else hi - (hi - start) * 2.0**-k
            if x >= hi or x == prev or x > 1e300:
                break
        if zf(x) > 0:
            return prev, x
        prev = x
    raise NoBoundedOrbit("effective potential does not change sign: orbit unbounded or captured")


def find_turning_points(spec: SystemSpec, H: float, L: float, *, strict: bool = True) -> TurningPoints:
    """Turning points of the radial oscillation and a report on the bounded-orbit hypothesis.

    Raises :class:`NoBoundedOrbit` when no oscillation exists and, when ``strict``,
    :class:`StarViolation` listing every failed condition.
    """
    _check_L(L)
    H, L = float(H), float(L)
    r0 = locate_minimum(spec, H, L)

    def zf(x):
        return float(effective_Z(spec, x, H, L))

    z0 = zf(r0)
    if z0 >= -CIRCULAR_TOL:
        raise NoBoundedOrbit(f"Z(r_zero) = {z0:.3g}: circular or no orbit at H={H}, L={L}")

    if spec.family == "schwarzschild":
        r_star = schw_critical_points(H, L, spec.M)["r_star"]
        if zf(r_star) <= 0:
            raise NoBoundedOrbit("orbit is captured: the potential barrier lies below the energy")
        a_lo, b_lo = r_star, r0
    else:
        inner, outer = _expand(spec, zf, r0, -1)
        a_lo, b_lo = outer, inner
    a_hi, b_hi = _expand(spec, zf, r0, +1)
    r_minus = _brent(zf, a_lo, b_lo, r0)
    r_plus = _brent(zf, a_hi, b_hi, r0)

    report = star_report(spec, H, L, r_minus, r0, r_plus)
    failed = [k for k, v in report["conditions"].items() if v is False]
    tp = TurningPoints(r_minus, r0, r_plus, not failed, report)
    if failed and strict:
        raise StarViolation(failed, report)
    return tp


def star_report(spec: SystemSpec, H, L, r_minus, r_zero, r_plus) -> dict:
    """Evaluate each condition of the bounded-orbit hypothesis at the given turning points."""
    zm = Z_derivatives(spec, r_minus, H, L, 1)
    zp = Z_derivatives(spec, r_plus, H, L, 1)
    z0 = Z_derivatives(spec, r_zero, H, L, 2)
    sample = np.linspace(r_minus, r_plus, 52)[1:-1]
    sample = sample[np.abs(sample - r_zero) > 1e-9 * r_zero]
    dz = np.asarray(Z_derivatives(spec, sample, H, L, 1)[1])
    # 1e-11 absolute, widened where Z is steep enough that one ulp of r exceeds it
    tol_m = 1e-11 * max(1.0, abs(zm[1]) * r_minus * 1e3)
    tol_p = 1e-11 * max(1.0, abs(zp[1]) * r_plus * 1e3)
    cond = {
        "ordered": bool(r_minus < r_zero < r_plus) and spec.contains([r_minus, r_plus]),
        "zeros": bool(abs(zm[0]) <= tol_m and abs(zp[0]) <= tol_p),
        "simple_zeros": bool(zm[1] < 0 < zp[1]),
        "negative_inside": bool(z0[0] < 0),
        "nondegenerate_minimum": bool(z0[2] > 0),
        "monotone": bool(np.all(dz * (sample - r_zero) > 0)),
        "in_region": spec.in_lambda(H, L),
    }
    notes = {}
    if spec.family == "schwarzschild":
        M = spec.M
        r_star = schw_critical_points(H, L, M)["r_star"]
        cond["r_zero_above_6M"] = bool(r_zero > 6 * M)
        # r_star lies in (3M, 4M] throughout the region, so this is reported only
        notes["r_star"] = r_star
        notes["r_star_above_6M"] = bool(r_star > 6 * M)
    return {
        "conditions": cond,
        "Z_r_minus": float(zm[0]),
        "Z_r_plus": float(zp[0]),
        "Z_r_zero": float(z0[0]),
        "Z2_r_zero": float(z0[2]),
        "notes": notes,
    }


def lambda_L_interval(spec: SystemSpec, H: float):
    """Open interval of ``L`` with ``(H, L)`` in the bounded-orbit region, or ``None``.

    Closed forms exist for every builtin family; custom systems return ``None``.
    """
    fam = spec.family
    if fam == "levi_civita":
        k_, lam = spec.param("kappa"), spec.param("lambda")
        if not H < 0:
            return None
        return math.sqrt(2 * lam), math.sqrt(2 * lam + k_ * k_ / (-2 * H))
    if fam == "homogeneous":
        k_, a = spec.param("kappa"), spec.param("a")
        base = (2 - a) * k_ ** (2 / (2 - a))
        if a > 0:
            if not H < 0:
                return None
            return 0.0, (base / (2 * a * -H)) ** ((2 - a) / (2 * a))
        if not H > 0:
            return None
        return 0.0, (H * (-2 * a) / base) ** ((2 - a) / (-2 * a))
    if fam == "logarithmic":
        k_ = spec.param("kappa")
        return 0.0, math.sqrt(k_) * math.exp((H - 0.5 * k_) / k_)
    if fam == "schwarzschild":
        from .schwarzschild import zeta_inv

        E, M = spec.E, spec.M
        if not -27 * E * E / 50 < H < -E * E / 2:
            return None
        return 4 * math.sqrt(2) * math.sqrt(-H) * M, math.sqrt(-H) * M * zeta_inv(E * E / (-2 * H))
    return None
