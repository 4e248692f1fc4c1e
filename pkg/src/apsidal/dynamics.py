"""Trajectories, the fixed-energy perihelion return map and its periodic points.

The Poincare section is ``p_r = 0`` crossed from ``p_r < 0`` to ``p_r > 0``
(the inner turning point) on the energy surface ``H_eps = H_star``. Points on
it are labelled by the lifted angle and the angular momentum; the radius is
recovered from the energy. Without perturbation the return map is the twist
map ``(theta, p_theta) -> (theta + Theta(H_star, p_theta), p_theta)``.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from math import gcd

import numpy as np
from scipy.optimize import brentq

from . import core
from .errors import (
    ApsidalError, DomainError, DomainExit, NewtonStalled, NoBoundedOrbit, NoResonance, NoReturn,
    NoSectionRoot, NoSignChange, NotCoprime, StepFailure, VerificationFailed,
)
from .model import PerturbationSpec, SystemSpec, build_system
from .radial import find_turning_points
from .timemaps import apsidal_angle, default_bracket, radial_period, resonance_find

RTOL = 1e-12
ATOL = 1e-12
RETURN_GUARD = 1e3
NEWTON_STEP = 1e-7
STABILITY_STEP = 1e-5
NEWTON_TOL = 1e-10
NEWTON_MAXITER = 40
SINGULAR_COND = 1e10
CLASS_TOL = 1e-6
PARABOLIC_TOL = 1e-8
CLOSURE_TOL = 1e-8
ENERGY_TOL = 1e-9
EPS_LADDER_LEVELS = 4
TWO_PI = 2 * math.pi


def thread_count() -> int:
    """Worker count from ``APSIDAL_THREADS`` (default: all cores)."""
    raw = os.environ.get("APSIDAL_THREADS", "")
    try:
        n = int(raw) if raw else (os.cpu_count() or 1)
    except ValueError:
        n = 1
    return max(1, n)


def parallel_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]`` on a thread pool; results keep the input order."""
    items = list(items)
    n = thread_count() if threads is None else max(1, int(threads))
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


# -- trajectories ------------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Accepted steps of one integration with DOP853 dense output.

    ``y`` rows are ``(r, theta, p_r, p_theta)`` with ``theta`` lifted; ``H``
    holds the perturbed energy at every accepted step.
    """

    t: np.ndarray
    y: np.ndarray
    H: np.ndarray
    h: np.ndarray
    coeffs: np.ndarray
    event_t: np.ndarray
    event_y: np.ndarray
    status: int

    def __call__(self, t):
        """Dense-output state at time ``t`` inside the integrated span."""
        t = float(t)
        span = self.t[-1] - self.t[0]
        if not self.t[0] <= t <= self.t[-1] + 1e-14 * span:
            raise DomainError(f"t={t} outside the integrated span [{self.t[0]}, {self.t[-1]}]")
        k = int(np.searchsorted(self.t, t, side="right")) - 1
        k = min(max(k, 0), len(self.h) - 1)
        x = (t - self.t[k]) / self.h[k]
        return core.backend.dense_eval(self.coeffs[k], self.y[k], min(max(x, 0.0), 1.0))

    def sample(self, per_step: int = 8):
        """Dense samples ``(t, y)`` with ``per_step`` points inside every step."""
        ts, ys = [self.t[0]], [self.y[0]]
        xs = np.arange(1, per_step + 1) / per_step
        for k in range(len(self.h)):
            for x in xs:
                ts.append(self.t[k] + x * self.h[k])
                ys.append(core.backend.dense_eval(self.coeffs[k], self.y[k], x))
        return np.array(ts), np.array(ys)

    @property
    def energy_drift(self) -> float:
        return float(np.max(np.abs(self.H - self.H[0])))


def _run(spec: SystemSpec, pert, state0, t0, t_end, *, max_events=0, record=False):
    system = build_system(spec, pert)
    lo, hi = spec.domain
    out = core.integrate(system.program, np.asarray(state0, dtype=float), t0, t_end,
                         rtol=RTOL, atol=ATOL, r_lo=lo, r_hi=hi, max_events=max_events, record=record)
    st = out["status"]
    if st == core.STATUS_DOMAIN:
        raise DomainExit(f"trajectory left the admissible region near t={out['t']:.6g}, state={out['y']}")
    if st == core.STATUS_STEP_FAILURE:
        raise StepFailure(f"step size underflow at t={out['t']:.6g}")
    if st == core.STATUS_MAX_STEPS:
        raise StepFailure(f"step budget exhausted at t={out['t']:.6g}")
    return out


def integrate(spec: SystemSpec, pert: PerturbationSpec | None, state0, t_span) -> Trajectory:
    """Integrate Hamilton's equations of ``H_eps`` over ``t_span = (t0, t1)``.

    Uses the 8th-order DOP853 scheme with tolerances ``1e-12``; perihelion
    passages are located on the dense output.
    """
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise DomainError("t_span must be increasing")
    out = _run(spec, pert, state0, t0, t1, record=True)
    return Trajectory(out["traj_t"], out["traj_y"], out["traj_H"], out["traj_h"], out["traj_F"],
                      out["event_t"], out["event_y"], out["status"])


# -- section -----------------------------------------------------------------------------------


@dataclass(frozen=True)
class SectionPoint:
    """Perihelion section point: lifted angle, angular momentum and the radius."""

    theta_lift: float
    p_theta: float
    r_section: float = math.nan

    @property
    def state(self) -> np.ndarray:
        return np.array([self.r_section, self.theta_lift, 0.0, self.p_theta])

    def as_dict(self) -> dict:
        return {"theta_lift": self.theta_lift, "p_theta": self.p_theta, "r_section": self.r_section}


def _energy_at(system, r, theta, p_theta):
    return system([r, theta, 0.0, p_theta])[0]


def section_lift(spec: SystemSpec, pert: PerturbationSpec | None, theta: float, p_theta: float,
                 H_star: float) -> np.ndarray:
    """State ``(r, theta, 0, p_theta)`` on ``H_eps = H_star`` near the unperturbed ``r_minus``."""
    system = build_system(spec, pert)
    try:
        tp = find_turning_points(spec, H_star, p_theta, strict=False)
    except (NoBoundedOrbit, DomainError) as err:
        raise NoSectionRoot(f"no bounded orbit at H*={H_star}, p_theta={p_theta}: {err}") from None

    def g(r):
        try:
            return _energy_at(system, r, theta, p_theta) - H_star
        except DomainError:
            return math.inf

    b = tp.r_zero
    if not g(b) < 0:
        raise NoSectionRoot(f"energy surface H*={H_star} misses the section at p_theta={p_theta}")
    a = tp.r_minus
    step = 0.05 * (tp.r_zero - tp.r_minus)
    lo = spec.domain[0]
    for _ in range(200):
        if g(a) > 0:
            break
        cand = a - step
        a = cand if spec.contains(cand) else 0.5 * (a + lo)
        step *= 2
    else:
        raise NoSectionRoot("no sign change of the energy below r_zero")
    r = brentq(g, a, b, xtol=1e-15 * b, rtol=4 * np.finfo(float).eps, maxiter=200)
    # one Newton polish with the exact radial derivative
    val, grad = system([r, theta, 0.0, p_theta])
    if grad[0] != 0:
        r2 = r - (val - H_star) / grad[0]
        if a < r2 < b and abs(g(r2)) <= abs(val - H_star):
            r = r2
    return np.array([r, float(theta), 0.0, float(p_theta)])


def _lift_point(spec, pert, theta, p_theta, H_star) -> SectionPoint:
    st = section_lift(spec, pert, theta, p_theta, H_star)
    return SectionPoint(float(st[1]), float(st[3]), float(st[0]))


def _transit_guard(spec, H_star, p_theta) -> float:
    try:
        return RETURN_GUARD * radial_period(spec, H_star, p_theta)
    except (ApsidalError, ArithmeticError) as err:
        raise NoSectionRoot(f"no reference period at p_theta={p_theta}: {err}") from None


def _iterate(spec, pert, theta, p_theta, H_star, n: int, *, record=False):
    """Lift ``(theta, p_theta)`` and integrate through ``n`` perihelion passages."""
    state = section_lift(spec, pert, theta, p_theta, H_star)
    t_max = n * _transit_guard(spec, H_star, p_theta)
    out = _run(spec, pert, state, 0.0, t_max, max_events=n, record=record)
    if len(out["event_t"]) < n:
        raise NoReturn(f"only {len(out['event_t'])} of {n} returns within t={t_max:.6g}")
    return state, out


@dataclass(frozen=True)
class ReturnResult:
    s_next: SectionPoint
    transit_time: float
    delta_theta: float


def return_map(spec: SystemSpec, pert: PerturbationSpec | None, s: SectionPoint, H_star: float) -> ReturnResult:
    """Next perihelion passage starting from the section point ``s``."""
    _, out = _iterate(spec, pert, s.theta_lift, s.p_theta, H_star, 1)
    ye = out["event_y"][0]
    nxt = SectionPoint(float(ye[1]), float(ye[3]), float(ye[0]))
    return ReturnResult(nxt, float(out["event_t"][0]), float(ye[1] - s.theta_lift))


def map_power(spec, pert, theta, p_theta, H_star, n: int) -> np.ndarray:
    """``(theta_n, p_theta_n)`` after ``n`` returns."""
    _, out = _iterate(spec, pert, theta, p_theta, H_star, n)
    ye = out["event_y"][n - 1]
    return np.array([ye[1], ye[3]])


def section_jacobian(spec, pert, theta, p_theta, H_star, n: int = 1, step: float = STABILITY_STEP) -> np.ndarray:
    """Central-difference Jacobian of the ``n``-fold return map in ``(theta, p_theta)``."""
    hs = (step * max(1.0, abs(theta)), step * max(1.0, abs(p_theta)))
    J = np.empty((2, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = hs[k]
        fp = map_power(spec, pert, theta + e[0], p_theta + e[1], H_star, n)
        fm = map_power(spec, pert, theta - e[0], p_theta - e[1], H_star, n)
        J[:, k] = (fp - fm) / (2 * hs[k])
    return J


def twist_deviation(spec: SystemSpec, pert: PerturbationSpec | None, s: SectionPoint, H_star: float):
    """``(mu1, mu2)``: return map minus the unperturbed twist map."""
    res = return_map(spec, pert, s, H_star)
    Th = apsidal_angle(spec, H_star, s.p_theta)
    return res.s_next.theta_lift - (s.theta_lift + Th), res.s_next.p_theta - s.p_theta


def rotation_number(spec: SystemSpec, pert: PerturbationSpec | None, s: SectionPoint, H_star: float,
                    N: int = 100) -> float:
    """Mean angle advance per return divided by ``2 pi`` over ``N`` returns."""
    if int(N) < 1:
        raise DomainError("N must be positive")
    th_n = map_power(spec, pert, s.theta_lift, s.p_theta, H_star, int(N))[0]
    return float((th_n - s.theta_lift) / (TWO_PI * int(N)))


# -- periodic points ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeriodicOrbitRecord:
    section_point: SectionPoint
    q: int
    p: int
    minimal_period: float
    residual: float
    stability_trace: float
    class_tag: str
    epsilon: float
    seed: int
    position_error: float = 0.0
    iterates: tuple = field(default=(), compare=False)

    def as_dict(self) -> dict:
        return {
            "section_point": self.section_point.as_dict(),
            "q": self.q,
            "p": self.p,
            "minimal_period": self.minimal_period,
            "residual": self.residual,
            "stability_trace": self.stability_trace,
            "class_tag": self.class_tag,
            "epsilon": self.epsilon,
            "seed": self.seed,
            "position_error": self.position_error,
        }


class PeriodicSearch(list):
    """List of :class:`PeriodicOrbitRecord`, one per periodicity class.

    ``degenerate`` is set when the Newton Jacobian is singular (the whole
    resonant circle is periodic, as for the unperturbed system); ``failures``
    maps seed indices to the reason their Newton run was abandoned.
    """

    def __init__(self, records=(), *, L_star=math.nan, epsilon=0.0, degenerate=False, failures=None):
        super().__init__(records)
        self.L_star = L_star
        self.epsilon = epsilon
        self.degenerate = degenerate
        self.failures = dict(failures or {})

    @property
    def continuum(self) -> bool:
        """All classes parabolic: the points lie on a curve of periodic points
        (the perturbed system is still integrable at this resonance)."""
        return bool(self) and all(rec.class_tag == "parabolic" for rec in self)


def classify_trace(tr: float) -> str:
    if abs(abs(tr) - 2) <= PARABOLIC_TOL:
        return "parabolic"
    return "elliptic" if abs(tr) < 2 else "hyperbolic"


def _wrap(x):
    return (x + math.pi) % TWO_PI - math.pi


def class_tolerance(a: PeriodicOrbitRecord, b: PeriodicOrbitRecord) -> float:
    """``CLASS_TOL``, widened for weakly isolated points whose position is less certain."""
    return max(CLASS_TOL, min(1e-3, 10 * (a.position_error + b.position_error)))


def same_class(iterates, theta, p_theta, tol: float = CLASS_TOL) -> bool:
    """Whether ``(theta, p_theta)`` equals one of ``iterates`` modulo ``2 pi`` in the angle."""
    for th, pt in iterates:
        if abs(_wrap(th - theta)) <= tol and abs(pt - p_theta) <= tol:
            return True
    return False


def _resonant_L(spec, H_star, p, q, bracket):
    if gcd(int(p), int(q)) != 1:
        raise NotCoprime(f"{p}/{q} is not in lowest terms")
    try:
        br = bracket if bracket is not None else default_bracket(spec, H_star)
        return resonance_find(spec, H_star, p, q, br).L_star
    except (NoSignChange, DomainError) as err:
        if isinstance(err, NotCoprime):
            raise
        raise NoResonance(f"no resonant angular momentum for {p}/{q} at H*={H_star}: {err}") from None


def _newton(spec, pert, H_star, p, q, theta0, p_theta0):
    """Newton iteration on ``M^q(x) - (theta + 2 pi p, p_theta)``.

    Returns ``(x, residual)`` with ``residual = None`` when the Jacobian is
    singular (a continuum of periodic points); raises :class:`NewtonStalled`
    when the residual does not reach ``NEWTON_TOL``.
    """
    shift = np.array([TWO_PI * p, 0.0])

    def F(x):
        return map_power(spec, pert, x[0], x[1], H_star, q) - x - shift

    def jac(x):
        hs = (NEWTON_STEP * max(1.0, abs(x[0])), NEWTON_STEP * max(1.0, abs(x[1])))
        J = np.empty((2, 2))
        for k in range(2):
            e = np.zeros(2)
            e[k] = hs[k]
            J[:, k] = (F(x + e) - F(x - e)) / (2 * hs[k])
        return J

    def singular(J):
        return not np.all(np.isfinite(J)) or not np.any(J[1]) or np.linalg.cond(J) > SINGULAR_COND

    x = np.array([theta0, p_theta0], dtype=float)
    fx = F(x)
    res = float(np.max(np.abs(fx)))
    for it in range(NEWTON_MAXITER):
        J = jac(x)
        if singular(J):
            return x, None
        if res <= NEWTON_TOL:
            return x, res
        dx = -np.linalg.solve(J, fx)
        lam = 1.0
        while True:
            xn = x + lam * dx
            try:
                fn = F(xn)
                rn = float(np.max(np.abs(fn)))
            except ApsidalError:
                rn = math.inf
            if rn < res or lam < 1e-3:
                break
            lam *= 0.5
        if not math.isfinite(rn):
            raise NewtonStalled(f"iterate left the section domain after {it + 1} steps")
        if rn >= res and res <= 1e3 * NEWTON_TOL:
            break
        x, fx, res = xn, fn, rn
    if res <= NEWTON_TOL:
        return x, (None if singular(jac(x)) else res)
    raise NewtonStalled(f"residual {res:.3g} after {NEWTON_MAXITER} Newton steps")


def find_periodic_points(spec: SystemSpec, pert: PerturbationSpec | None, H_star: float, p: int, q: int,
                         seed_count: int = 8, *, bracket=None, threads: int | None = None) -> PeriodicSearch:
    """Periodic points of the return map with ``q`` returns and ``p`` turns, one per class.

    Seeds are ``(2 pi j / seed_count, L_star)`` with ``L_star`` the resonant
    angular momentum. Converged points are merged into periodicity classes
    (equal up to iteration and ``2 pi`` angle shifts).
    """
    p, q = int(p), int(q)
    if q < 1 or p < 1:
        raise DomainError("winding numbers must be positive")
    L_star = _resonant_L(spec, H_star, p, q, bracket)
    eps = 0.0 if pert is None else pert.epsilon

    def run(j):
        try:
            return _newton(spec, pert, H_star, p, q, TWO_PI * j / seed_count, L_star)
        except (NewtonStalled, ApsidalError) as err:
            return err

    outcomes = parallel_map(run, range(seed_count), threads)
    search = PeriodicSearch(L_star=L_star, epsilon=eps)
    for j, out in enumerate(outcomes):
        if isinstance(out, Exception):
            search.failures[j] = f"{type(out).__name__}: {out}"
            continue
        x, res = out
        if res is None:
            search.degenerate = True
            search.failures[j] = "singular Jacobian: the resonant circle is degenerate"
            continue
        try:
            rec = _make_record(spec, pert, H_star, p, q, _wrap(x[0]), x[1], res, j)
        except ApsidalError as err:
            search.failures[j] = f"{type(err).__name__}: {err}"
            continue
        sp = rec.section_point
        if not any(same_class(old.iterates, sp.theta_lift, sp.p_theta, class_tolerance(old, rec))
                   for old in search):
            search.append(rec)
    return search


def _make_record(spec, pert, H_star, p, q, theta, p_theta, residual, seed):
    state, out = _iterate(spec, pert, theta, p_theta, H_star, q)
    ev = out["event_y"]
    iterates = [(theta, p_theta)] + [(_wrap(e[1]), e[3]) for e in ev[:-1]]
    J = section_jacobian(spec, pert, theta, p_theta, H_star, q)
    tr = float(np.trace(J))
    # a residual (or integration noise) of size f moves the root by about |(DM^q - I)^-1| f
    noise = max(residual, 1e-12 * max(1.0, TWO_PI * p))
    try:
        pos_err = float(np.linalg.norm(np.linalg.inv(J - np.eye(2)), 2) * noise)
    except np.linalg.LinAlgError:
        pos_err = math.inf
    sp = SectionPoint(float(theta), float(p_theta), float(state[0]))
    return PeriodicOrbitRecord(sp, q, p, float(out["event_t"][q - 1]), float(residual), tr,
                               classify_trace(tr), 0.0 if pert is None else pert.epsilon, seed,
                               pos_err, tuple(iterates))


def epsilon_ladder(epsilon: float, levels: int = EPS_LADDER_LEVELS):
    return [epsilon / 2**k for k in range(levels)]


# -- verification ------------------------------------------------------------------------------


@dataclass(frozen=True)
class VerificationReport:
    closure: float
    theta_advance_error: float
    events: int
    energy_error: float
    winding: int
    passed: bool

    def as_dict(self) -> dict:
        return {"closure": self.closure, "theta_advance_error": self.theta_advance_error,
                "events": self.events, "energy_error": self.energy_error, "winding": self.winding,
                "passed": self.passed}


def winding_number(traj: Trajectory, t_end: float, r_center: float) -> int:
    """Signed turns of ``(r - r_center, p_r)`` on ``[0, t_end]`` (positive counter-clockwise)."""
    ts, ys = traj.sample(16)
    keep = ts <= t_end
    ang = np.unwrap(np.arctan2(ys[keep, 2], ys[keep, 0] - r_center))
    last = traj(t_end)
    a_end = math.atan2(last[2], last[0] - r_center)
    total = ang[-1] - ang[0] + _wrap(a_end - ang[-1])
    return int(round(total / TWO_PI))


def verify_closed_orbit(spec: SystemSpec, pert: PerturbationSpec | None, record: PeriodicOrbitRecord,
                        H_star: float) -> VerificationReport:
    """Re-integrate ``record`` over its minimal period and check closure, energy and windings."""
    sp = record.section_point
    try:
        state = section_lift(spec, pert, sp.theta_lift, sp.p_theta, H_star)
    except NoSectionRoot as err:
        raise VerificationFailed("section", str(err)) from None
    period = record.minimal_period
    tail = 0.25 * period / record.q
    traj = integrate(spec, pert, state, (0.0, period + tail))
    end = traj(period)
    closure = float(max(abs(end[0] - state[0]), abs(end[2] - state[2]), abs(end[3] - state[3])))
    adv = float(abs(end[1] - state[1] - TWO_PI * record.p))
    events = int(np.sum(traj.event_t <= period * (1 + 1e-9)))
    e_err = float(np.max(np.abs(traj.H - H_star)))
    r_center = find_turning_points(spec, H_star, sp.p_theta, strict=False).r_zero
    wind = abs(winding_number(traj, period, r_center))
    if closure > CLOSURE_TOL:
        raise VerificationFailed("closure", f"max |delta (r, p_r, p_theta)| = {closure:.3g}")
    if adv > CLOSURE_TOL:
        raise VerificationFailed("theta_advance", f"|delta theta - 2 pi p| = {adv:.3g}")
    if events != record.q:
        raise VerificationFailed("events", f"{events} perihelion passages, expected {record.q}")
    if e_err > ENERGY_TOL * max(1.0, abs(H_star)):
        raise VerificationFailed("energy", f"max |H - H*| = {e_err:.3g}")
    if wind != record.q:
        raise VerificationFailed("winding", f"(r, p_r) winds {wind} times, expected {record.q}")
    return VerificationReport(closure, adv, events, e_err, wind, True)


@dataclass
class BifurcationResult:
    epsilon: float
    records: list
    reports: list
    attempts: list
    L_star: float

    @property
    def found(self) -> bool:
        return len(self.records) >= 2


def bifurcate(spec: SystemSpec, pert: PerturbationSpec, H_star: float, p: int, q: int, *,
              seed_count: int = 8, levels: int = EPS_LADDER_LEVELS, bracket=None,
              threads: int | None = None) -> BifurcationResult:
    """Search for verified periodicity classes, halving ``epsilon`` until two are found."""
    attempts = []
    best = None
    for eps in epsilon_ladder(pert.epsilon, levels):
        pe = pert.with_epsilon(eps)
        search = find_periodic_points(spec, pe, H_star, p, q, seed_count, bracket=bracket, threads=threads)
        recs, reps = [], []
        for rec in search:
            try:
                reps.append(verify_closed_orbit(spec, pe, rec, H_star))
                recs.append(rec)
            except VerificationFailed as err:
                search.failures[rec.seed] = str(err)
        attempts.append({"epsilon": eps, "classes": len(search), "verified": len(recs),
                         "degenerate": search.degenerate, "failures": dict(search.failures)})
        result = BifurcationResult(eps, recs, reps, attempts, search.L_star)
        if best is None or len(recs) > len(best.records):
            best = result
        if len(recs) >= 2:
            return result
    best.attempts = attempts
    return best
