"""Radial period, apsidal angle, enclosed area and their derivatives.

All three integrals have inverse-square-root singularities at the turning
points; the substitution ``x = x_minus + (x_plus - x_minus) sin^2(psi)`` turns
them into analytic integrands that composite Gauss-Legendre handles to
near machine precision.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.optimize import brentq

from . import quad
from ._series import dL_z_of_u, z_of_u_derivatives
from .errors import (
    BranchInversionFailed, DomainError, NoBoundedOrbit, NoSignChange, NotCoprime,
    StepOutsideDomain,
)
from .model import SystemSpec
from .radial import (
    TurningPoints, Z_derivatives, effective_Z, find_turning_points, lambda_L_interval, locate_minimum,
)

SQRT2 = math.sqrt(2.0)
FD_STEP = 1e-4
ZERO_RTOL = 1e-6


# -- integrands ------------------------------------------------------------------------------


_T_NODES, _T_WEIGHTS = (lambda xw: (0.5 * (xw[0] + 1), 0.5 * xw[1]))(np.polynomial.legendre.leggauss(32))


def _stable_ratio(dN, xm, xp, x0, s2, c2):
    """``N(x) / (d s c)^2`` for ``x = xm + d s^2`` where ``N`` vanishes at ``xm`` and ``xp``.

    Below ``x0`` we use ``N(x) = (x - xm) * mean(N')`` over ``[xm, x]`` and above it
    ``N(x) = (xp - x) * mean(-N')`` over ``[x, xp]``; neither form cancels. The
    means are taken in ``log x`` so that wide power-law ranges stay resolved.
    """
    d = xp - xm
    x = xm + d * s2
    low = x <= x0
    a = np.where(low, xm, x)
    b = np.where(low, x, xp)
    span = b - a
    logr = np.log1p(span / a)
    X = a[:, None] * np.exp(logr[:, None] * _T_NODES)
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(span > 0, logr / span, 1.0 / a)
    mean = scale * np.sum(_T_WEIGHTS * dN(X) * X, axis=-1)
    return x, np.where(low, mean / (d * c2), -mean / (d * s2))


def _neg_z_r(spec: SystemSpec, tp: TurningPoints, H, L, psi):
    """``r(psi)`` and ``-Z(r) / (d sin psi cos psi)^2`` with ``d = r_plus - r_minus``."""
    a, b = tp.r_minus, tp.r_plus
    d = b - a
    s2, c2 = np.sin(psi) ** 2, np.cos(psi) ** 2
    if spec.family == "schwarzschild":
        M = spec.M
        r = a + d * s2
        u, up, um = 1.0 / r, 1.0 / b, 1.0 / a
        u3 = 0.5 / M - up - um
        # -Z = M L^2 (u - u_plus)(u_minus - u)(u3 - u), with the two small factors exact
        return r, M * L * L / (r * r * a * b) * (u3 - u)

    def dN(r):
        return -Z_derivatives(spec, r, H, L, 1)[1]

    return _stable_ratio(dN, a, b, tp.r_zero, s2, c2)


def _period_integrand(spec, tp, H, L):
    def f(psi):
        _, g = _neg_z_r(spec, tp, H, L, psi)
        # sqrt(2) dr / sqrt(-Z) with dr = 2 d sin cos dpsi
        return 2.0 * SQRT2 / np.sqrt(g)

    return f


def _angle_integrand(spec, tp, H, L):
    up, um = 1.0 / tp.r_plus, 1.0 / tp.r_minus
    du = um - up

    def f(psi):
        s2, c2 = np.sin(psi) ** 2, np.cos(psi) ** 2
        if spec.family == "schwarzschild":
            M = spec.M
            u = up + du * s2
            g = M * L * L * (0.5 / M - up - um - u)
        else:
            def dN(u):
                r = 1.0 / u
                return r * r * Z_derivatives(spec, r, H, L, 1)[1]

            _, g = _stable_ratio(dN, up, um, 1.0 / tp.r_zero, s2, c2)
        return 2.0 * SQRT2 * L / np.sqrt(g)

    return f


def _area_integrand(spec, tp, H, L):
    d = tp.r_plus - tp.r_minus

    def f(psi):
        r, g = _neg_z_r(spec, tp, H, L, psi)
        a = spec.eval(r).alpha
        sc = np.sin(psi) * np.cos(psi)
        # 2 sqrt(2) sqrt(-Z) / alpha dr,  sqrt(-Z) = d sin cos sqrt(g)
        return 4.0 * SQRT2 * d * d * sc * sc * np.sqrt(g) / a

    return f


def _integrate(f, what):
    return quad.integrate(f, 0.0, 0.5 * math.pi, what=what)


# -- public time maps -------------------------------------------------------------------------


@dataclass(frozen=True)
class Partials:
    dT_dH: float
    dT_dL: float
    dTheta_dH: float
    dTheta_dL: float
    errors: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {"dT_dH": self.dT_dH, "dT_dL": self.dT_dL,
                "dTheta_dH": self.dTheta_dH, "dTheta_dL": self.dTheta_dL}


@dataclass(frozen=True)
class TimeMaps:
    """``T``, ``Theta``, ``Area`` and ``P = Theta / L`` at one ``(H, L)``."""

    H: float
    L: float
    T: float
    Theta: float
    Area: float
    P: float
    errors: dict
    turning: TurningPoints
    partials: Partials | None = None


def radial_period(spec: SystemSpec, H: float, L: float) -> float:
    """Time between consecutive perihelion passages."""
    tp = find_turning_points(spec, H, L)
    return _integrate(_period_integrand(spec, tp, H, L), "radial period").value


def apsidal_angle(spec: SystemSpec, H: float, L: float) -> float:
    """Angle swept between consecutive perihelion passages."""
    tp = find_turning_points(spec, H, L)
    return _integrate(_angle_integrand(spec, tp, H, L), "apsidal angle").value


def orbit_area(spec: SystemSpec, H: float, L: float) -> float:
    """Area enclosed by the orbit in the ``(r, p_r)`` plane."""
    tp = find_turning_points(spec, H, L)
    return _integrate(_area_integrand(spec, tp, H, L), "area").value


def _maps(spec, H, L, with_area=True):
    tp = find_turning_points(spec, H, L)
    T = _integrate(_period_integrand(spec, tp, H, L), "radial period")
    Th = _integrate(_angle_integrand(spec, tp, H, L), "apsidal angle")
    A = _integrate(_area_integrand(spec, tp, H, L), "area") if with_area else None
    return tp, T, Th, A


def time_maps(spec: SystemSpec, H: float, L: float, *, partials: bool = False) -> TimeMaps:
    tp, T, Th, A = _maps(spec, H, L)
    errs = {"T": T.error, "Theta": Th.error, "Area": A.error}
    pt = timemap_partials(spec, H, L) if partials else None
    return TimeMaps(float(H), float(L), T.value, Th.value, A.value, Th.value / L, errs, tp, pt)


def _inside(spec, H, L):
    verdict = spec.in_lambda(H, L)
    if verdict is None:
        try:
            find_turning_points(spec, H, L)
        except (NoBoundedOrbit, DomainError):
            return False
        return True
    return bool(verdict)


def _richardson(f, x, h):
    fp, fm = f(x + h), f(x - h)
    fp2, fm2 = f(x + h / 2), f(x - h / 2)
    out = []
    for k in range(len(fp[0])):
        d1 = (fp[0][k] - fm[0][k]) / (2 * h)
        d2 = (fp2[0][k] - fm2[0][k]) / h
        ext = (4 * d2 - d1) / 3
        noise = (fp[1][k] + fm[1][k] + fp2[1][k] + fm2[1][k]) / h
        out.append((ext, abs(ext - d2) + noise))
    return out


def timemap_partials(spec: SystemSpec, H: float, L: float, *, step: float | None = None) -> Partials:
    """Central differences of ``T`` and ``Theta`` with one Richardson step.

    The step is ``1e-4 * max(1, |x|)`` (or ``step * max(1, |x|)``); every
    stencil point must lie in the bounded-orbit region. Error bars are the
    Richardson residual plus the propagated quadrature error.
    """
    rel = FD_STEP if step is None else step
    hH = rel * max(1.0, abs(H))
    hL = rel * max(1.0, abs(L))
    for HH, LL in ((H + hH, L), (H - hH, L), (H, L + hL), (H, L - hL)):
        if not _inside(spec, HH, LL):
            raise StepOutsideDomain(f"finite-difference stencil point (H={HH}, L={LL}) leaves the region")

    def at(HH, LL):
        _, T, Th, _ = _maps(spec, HH, LL, with_area=False)
        return (T.value, Th.value), (T.error, Th.error)

    (dTH, eTH), (dThH, eThH) = _richardson(lambda x: at(x, L), H, hH)
    (dTL, eTL), (dThL, eThL) = _richardson(lambda x: at(H, x), L, hL)
    errors = {"dT_dH": eTH, "dT_dL": eTL, "dTheta_dH": eThH, "dTheta_dL": eThL}
    return Partials(dTH, dTL, dThH, dThL, errors)


def classify(value: float, error: float, scale: float) -> str:
    """``nondegenerate`` if ``|value| > 3 error``; ``degenerate`` if the whole
    ``3 error`` band sits inside ``ZERO_RTOL * scale``; ``inconclusive`` otherwise."""
    if abs(value) > 3 * error:
        return "nondegenerate"
    if abs(value) + 3 * error <= ZERO_RTOL * scale:
        return "degenerate"
    return "inconclusive"


@dataclass(frozen=True)
class NondegeneracyReport:
    fixed_energy: float
    fixed_energy_error: float
    fixed_energy_verdict: str
    fixed_period_determinant: float
    fixed_period_error: float
    fixed_period_verdict: str
    maps: TimeMaps

    def as_dict(self) -> dict:
        return {
            "fixed_energy": self.fixed_energy,
            "fixed_energy_error": self.fixed_energy_error,
            "fixed_energy_verdict": self.fixed_energy_verdict,
            "fixed_period_determinant": self.fixed_period_determinant,
            "fixed_period_error": self.fixed_period_error,
            "fixed_period_verdict": self.fixed_period_verdict,
        }


def nondegeneracy(spec: SystemSpec, H: float, L: float, *, step: float | None = None) -> NondegeneracyReport:
    """Isoenergetic (``dTheta/dL``) and fixed-period (Jacobian determinant) checks."""
    tm = time_maps(spec, H, L)
    pt = timemap_partials(spec, H, L, step=step)
    e = pt.errors
    fe_scale = tm.Theta / L
    det = pt.dT_dH * pt.dTheta_dL - pt.dT_dL * pt.dTheta_dH
    det_err = (abs(pt.dT_dH) * e["dTheta_dL"] + abs(pt.dTheta_dL) * e["dT_dH"]
               + abs(pt.dT_dL) * e["dTheta_dH"] + abs(pt.dTheta_dH) * e["dT_dL"])
    det_scale = abs(pt.dT_dH) * tm.Theta / L + abs(pt.dT_dL) * tm.Theta / max(abs(H), 1e-3)
    return NondegeneracyReport(
        pt.dTheta_dL, e["dTheta_dL"], classify(pt.dTheta_dL, e["dTheta_dL"], fe_scale),
        det, det_err, classify(det, det_err, det_scale),
        TimeMaps(tm.H, tm.L, tm.T, tm.Theta, tm.Area, tm.P, tm.errors, tm.turning, pt),
    )


# -- resonances --------------------------------------------------------------------------------


@dataclass(frozen=True)
class Resonance:
    L_star: float
    p: int
    q: int
    Theta: float
    T: float
    minimal_period: float


def _check_ratio(p, q):
    if int(p) != p or int(q) != q or p < 1 or q < 1:
        raise DomainError(f"winding numbers must be positive integers (got {p}/{q})")
    if gcd(int(p), int(q)) != 1:
        raise NotCoprime(f"{p}/{q} is not in lowest terms")


def resonance_find(spec: SystemSpec, H_star: float, p: int, q: int, bracket) -> Resonance:
    """Angular momentum at which ``Theta(H_star, L) = 2 pi p / q``.

    ``q`` radial oscillations then take exactly ``p`` turns, so the orbit closes
    after ``q * T``.
    """
    _check_ratio(p, q)
    target = 2 * math.pi * p / q
    lo, hi = float(bracket[0]), float(bracket[1])

    def g(L):
        return apsidal_angle(spec, H_star, L) - target

    try:
        glo, ghi = g(lo), g(hi)
    except (NoBoundedOrbit, DomainError) as err:
        raise NoSignChange(f"bracket end outside the bounded-orbit region: {err}") from None
    if glo == 0:
        L_star = lo
    elif ghi == 0:
        L_star = hi
    elif (glo > 0) == (ghi > 0):
        raise NoSignChange(f"Theta - 2 pi {p}/{q} has the same sign at L={lo} and L={hi}")
    else:
        L_star = brentq(g, lo, hi, xtol=1e-15 * max(lo, hi), rtol=1e-15, maxiter=200)
    _, T, Th, _ = _maps(spec, H_star, L_star, with_area=False)
    return Resonance(L_star, int(p), int(q), Th.value, T.value, q * T.value)


def default_bracket(spec: SystemSpec, H: float, margin: float = 1e-4):
    """Shrunken closed-form ``L`` interval of the bounded-orbit region at energy ``H``."""
    iv = lambda_L_interval(spec, H)
    if iv is None:
        raise DomainError(f"no closed-form angular-momentum interval for {spec.family} at H={H}")
    a, b = iv
    w = b - a
    return a + margin * w, b - margin * w


def resonance_scan(spec: SystemSpec, H: float, q_max: int, interval=None, n_grid: int = 200):
    """Every ``p/q`` (``q <= q_max``, coprime) crossed by ``Theta(H, .)`` on a grid.

    Returns a list of dicts with the resonance, ``dTheta_dL`` with error bar and
    a non-degeneracy verdict, ordered by ``L``.
    """
    lo, hi = interval if interval is not None else default_bracket(spec, H)
    Ls = np.linspace(lo, hi, n_grid)
    vals = []
    for L in Ls:
        try:
            vals.append(apsidal_angle(spec, H, L))
        except (NoBoundedOrbit, DomainError, ArithmeticError):
            vals.append(math.nan)
    out = []
    seen = set()
    for i in range(n_grid - 1):
        a, b = vals[i], vals[i + 1]
        if not (math.isfinite(a) and math.isfinite(b)):
            continue
        wlo, whi = sorted((a, b))
        for q in range(1, q_max + 1):
            p_lo = math.floor(wlo * q / (2 * math.pi)) + 1
            p_hi = math.ceil(whi * q / (2 * math.pi)) - 1
            for p in range(max(p_lo, 1), p_hi + 1):
                if gcd(p, q) != 1 or (p, q, i) in seen:
                    continue
                seen.add((p, q, i))
                res = resonance_find(spec, H, p, q, (Ls[i], Ls[i + 1]))
                out.append(_attach_verdict(spec, H, res))
    out.sort(key=lambda d: d["L"])
    return out


def _attach_verdict(spec, H, res: Resonance) -> dict:
    entry = {"L": res.L_star, "p": res.p, "q": res.q, "Theta": res.Theta, "T": res.T,
             "minimal_period": res.minimal_period}
    try:
        pt = timemap_partials(spec, H, res.L_star)
        val, err = pt.dTheta_dL, pt.errors["dTheta_dL"]
        entry["method"] = "finite_difference"
    except StepOutsideDomain:
        val, err = dTheta_dL_integral(spec, H, res.L_star)
        entry["method"] = "integral_formula"
    entry["dTheta_dL"] = val
    entry["dTheta_dL_error"] = err
    entry["verdict"] = classify(val, err, res.Theta / res.L_star)
    entry["flagged"] = entry["verdict"] != "nondegenerate"
    return entry


# -- period map through the h-substitution -----------------------------------------------------

_S_NODES, _S_WEIGHTS = (lambda xw: (0.5 * (xw[0] + 1), 0.5 * xw[1]))(np.polynomial.legendre.leggauss(24))


class HMap:
    """The regularising map ``h(u) = sgn(u - u0) sqrt(Omega(u))`` for one ``(H, L)``.

    Here ``u = 1/r``, ``Omega(u) = Z(1/u) - Z(r_zero)`` and ``c = -Z(r_zero)``.
    Writing ``h = delta * sqrt(Q(delta))`` with ``delta = u - u0`` and
    ``Q(delta) = int_0^1 (1 - s) Omega''(u0 + s delta) ds`` keeps every quantity
    free of cancellation, even for nearly circular orbits.
    """

    def __init__(self, spec: SystemSpec, H: float, L: float):
        if not L > 0:
            raise DomainError(f"angular momentum must satisfy L > 0 (got L={L})")
        self.spec, self.H, self.L = spec, float(H), float(L)
        r0 = locate_minimum(spec, H, L)
        self.u0 = 1.0 / r0
        self.c = -float(effective_Z(spec, r0, H, L))
        if not self.c > 0:
            raise NoBoundedOrbit(f"no oscillation around r_zero at H={H}, L={L}")
        self.delta_minus, self.delta_plus = self._turning_deltas()

    # Q^(k)(delta) = int_0^1 (1-s) s^k Omega^(2+k)(u0 + s delta) ds
    def q_derivs(self, delta, kmax: int):
        delta = np.asarray(delta, dtype=float)
        U = self.u0 + delta[..., None] * _S_NODES
        D = z_of_u_derivatives(self.spec, U, self.H, self.L, 2 + kmax)
        w = _S_WEIGHTS * (1 - _S_NODES)
        return [np.sum(w * _S_NODES**k * D[2 + k], axis=-1) for k in range(kmax + 1)]

    def r_derivs(self, delta, kmax: int):
        """``R^(k)`` with ``dOmega/dL = delta * R(delta)``."""
        delta = np.asarray(delta, dtype=float)
        U = self.u0 + delta[..., None] * _S_NODES
        G = dL_z_of_u(self.spec, U, self.L, 1 + kmax)
        return [np.sum(_S_WEIGHTS * _S_NODES**k * G[1 + k], axis=-1) for k in range(kmax + 1)]

    def h_derivs(self, delta, order: int = 1):
        """``[h, h', ..., h^(order)]`` in ``u`` at ``u0 + delta`` (``order <= 3``)."""
        delta = np.asarray(delta, dtype=float)
        Q = self.q_derivs(delta, order)
        S = [np.sqrt(Q[0])]
        if order >= 1:
            S.append(Q[1] / (2 * S[0]))
        if order >= 2:
            S.append((Q[2] - 2 * S[1] ** 2) / (2 * S[0]))
        if order >= 3:
            S.append((Q[3] - 6 * S[1] * S[2]) / (2 * S[0]))
        out = [delta * S[0]]
        for k in range(1, order + 1):
            out.append(k * S[k - 1] + delta * S[k])
        return out

    def dL_h(self, delta):
        """``(dh/dL, dh'/dL)`` at fixed ``u``."""
        Q0, Q1 = self.q_derivs(delta, 1)
        R0, R1 = self.r_derivs(delta, 1)
        S, S1 = np.sqrt(Q0), Q1 / (2 * np.sqrt(Q0))
        return R0 / (2 * S), (R1 * S - R0 * S1) / (2 * S * S)

    @property
    def dL_c(self) -> float:
        return -float(dL_z_of_u(self.spec, np.array([self.u0]), self.L, 0)[0][0])

    def _turning_deltas(self):
        # seed from the polished turning radii, then solve h(delta) = -+sqrt(c) by Newton
        tp = find_turning_points(self.spec, self.H, self.L, strict=False)
        seeds = (1.0 / tp.r_plus - self.u0, 1.0 / tp.r_minus - self.u0)
        out = []
        for sign, d in zip((-1.0, 1.0), seeds):
            target = sign * math.sqrt(self.c)
            for _ in range(20):
                h, dh = (float(v[0]) for v in self.h_derivs(np.array([d]), 1))
                if not (math.isfinite(h) and dh > 0):
                    raise BranchInversionFailed("h is not monotone between the turning points")
                nd = d - (h - target) / dh
                if nd * sign <= 0:
                    raise BranchInversionFailed("turning point of h crossed the minimum")
                if abs(nd - d) <= 1e-15 * abs(nd):
                    d = nd
                    break
                d = nd
            if abs(float(self.h_derivs(np.array([d]), 0)[0][0]) - target) > 1e-12 * abs(target):
                raise BranchInversionFailed("turning points of h did not converge")
            out.append(d)
        return out[0], out[1]

    def invert(self, target):
        """``delta`` with ``h(u0 + delta) = target`` (vectorised safeguarded Newton)."""
        target = np.asarray(target, dtype=float)
        sc = math.sqrt(self.c)
        lo = np.full(target.shape, self.delta_minus)
        hi = np.full(target.shape, self.delta_plus)
        h1 = float(self.h_derivs(np.array([0.0]), 1)[1][0])
        d = np.clip(target / h1, lo, hi)
        tol = 1e-15 * (self.delta_plus - self.delta_minus)
        for _ in range(100):
            h, dh = self.h_derivs(d, 1)
            res = h - target
            lo = np.where(res < 0, d, lo)
            hi = np.where(res > 0, d, hi)
            step = res / dh
            nd = d - step
            bad = ~((nd > lo) & (nd < hi)) | ~np.isfinite(nd)
            nd = np.where(bad, 0.5 * (lo + hi), nd)
            done = np.abs(nd - d) <= tol
            d = nd
            if np.all(done):
                break
        h = self.h_derivs(d, 0)[0]
        if np.any(np.abs(h - target) > 1e-12 * sc):
            raise BranchInversionFailed("inverse of h did not reach 1e-12 accuracy")
        return d

    def delta_of_theta(self, theta):
        return self.invert(math.sqrt(self.c) * np.sin(theta))


def regularized_P(spec: SystemSpec, H: float, L: float, *, full: bool = False):
    """Period map ``P = Theta / L`` via ``P = sqrt(2) int_{-pi/2}^{pi/2} dtheta / h'``."""
    hm = HMap(spec, H, L)

    def f(theta):
        d = hm.delta_of_theta(theta)
        return SQRT2 / hm.h_derivs(d, 1)[1]

    res = quad.integrate(f, -0.5 * math.pi, 0.5 * math.pi, what="regularized P")
    return (res.value, res.error) if full else res.value


def dP_dL_integral(spec: SystemSpec, H: float, L: float, *, full: bool = False):
    """``dP/dL`` from the two-integral formula in the ``theta`` variable.

    ``dc/dL`` multiplies ``int (3 h''^2 - h' h''') / h'^5 cos^2`` and the second
    term is ``sqrt(2) int (h'' dh/dL - h' dh'/dL) / h'^3``. All derivatives of
    ``h`` are exact (series composition), so the error bar is the quadrature one.
    """
    hm = HMap(spec, H, L)
    dc = hm.dL_c

    def f1(theta):
        d = hm.delta_of_theta(theta)
        _, h1, h2, h3 = hm.h_derivs(d, 3)
        return (3 * h2 * h2 - h1 * h3) / h1**5 * np.cos(theta) ** 2

    def f2(theta):
        d = hm.delta_of_theta(theta)
        _, h1, h2 = hm.h_derivs(d, 2)
        hl, h1l = hm.dL_h(d)
        return (h2 * hl - h1 * h1l) / h1**3

    a, b = -0.5 * math.pi, 0.5 * math.pi
    # either integral may vanish identically (quadratic Omega); measure against P / L
    P = regularized_P(spec, H, L)
    floor = 1e-12 * P / L
    i1 = quad.integrate(f1, a, b, atol=floor * SQRT2 / max(abs(dc), 1e-300), what="dP/dL first integral")
    i2 = quad.integrate(f2, a, b, atol=floor / SQRT2, what="dP/dL second integral")
    val = dc / SQRT2 * i1.value + SQRT2 * i2.value
    err = abs(dc) / SQRT2 * i1.error + SQRT2 * i2.error
    return (val, err) if full else val


def dTheta_dL_integral(spec: SystemSpec, H: float, L: float):
    """``dTheta/dL = P + L dP/dL`` with both pieces from the h-substitution; ``(value, error)``."""
    P, eP = regularized_P(spec, H, L, full=True)
    dP, edP = dP_dL_integral(spec, H, L, full=True)
    return P + L * dP, eP + L * edP
