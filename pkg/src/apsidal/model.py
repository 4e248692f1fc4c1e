"""Unperturbed system families, perturbations and the perturbed Hamiltonian.

Every system has the form ``H0 = 1/2 (alpha(r) pr^2 + ptheta^2 / r^2) - V(r)``.
Perturbations enter at the Hamiltonian level: ``H_eps = H0 + eps * Htilde``.
A force perturbation ``+eps * grad U`` in the plane corresponds to
``Htilde = -U``. Metric perturbations ``l11 dr^2 + 2 l13 dr dtheta + l33 dtheta^2``
are turned into a Hamiltonian by inverting the 2x2 momentum matrix exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import NamedTuple

import numpy as np

from . import expr as ex
from .errors import DomainError, SingularMetric
from .expr import Expr, Var

R = Var("r")
THETA = Var("theta")
PR = Var("pr")
PTHETA = Var("ptheta")

FAMILIES = ("levi_civita", "homogeneous", "logarithmic", "schwarzschild", "custom")


class SystemValues(NamedTuple):
    alpha: float
    dalpha: float
    V: float
    dV: float


def _falling(a: float, k: int) -> float:
    out = 1.0
    for j in range(k):
        out *= a - j
    return out


@dataclass(frozen=True)
class SystemSpec:
    """One unperturbed system: a family, its parameters and the radial domain.

    Build instances with the classmethods (:meth:`levi_civita`,
    :meth:`homogeneous`, :meth:`logarithmic`, :meth:`schwarzschild`,
    :meth:`custom`) rather than the raw constructor.
    """

    family: str
    params: tuple = ()
    domain: tuple = (0.0, math.inf)
    alpha_expr: Expr = field(default=ex.ONE, compare=False)
    V_expr: Expr = field(default=ex.ZERO, compare=False)
    custom_text: tuple = ()

    # -- constructors ---------------------------------------------------------
    @classmethod
    def levi_civita(cls, kappa: float = 1.0, lam: float = 0.0) -> "SystemSpec":
        if not kappa > 0 or lam < 0:
            raise DomainError("Levi-Civita family needs kappa > 0 and lambda >= 0")
        V = ex.add(ex.div(ex.Const(kappa), R), ex.div(ex.Const(lam), ex.pow_frac(R, ex.Fraction(2))))
        return cls("levi_civita", (("kappa", float(kappa)), ("lambda", float(lam))), (0.0, math.inf), ex.ONE, V)

    @classmethod
    def kepler(cls, kappa: float = 1.0) -> "SystemSpec":
        return cls.homogeneous(kappa, 1.0)

    @classmethod
    def harmonic(cls, kappa: float = 1.0) -> "SystemSpec":
        return cls.homogeneous(kappa, -2.0)

    @classmethod
    def homogeneous(cls, kappa: float = 1.0, a: float = 1.0) -> "SystemSpec":
        """``V(r) = kappa / (a r^a)``; ``a = 1`` is Kepler, ``a = -2`` the harmonic oscillator."""
        if not kappa > 0:
            raise DomainError("homogeneous family needs kappa > 0")
        if a == 0:
            raise DomainError("exponent a = 0 is the logarithmic family")
        if not a < 2:
            raise DomainError("homogeneous family needs exponent a < 2")
        V = ex.mul(ex.Const(kappa / a), ex.power(R, ex.Const(-float(a))))
        return cls("homogeneous", (("kappa", float(kappa)), ("a", float(a))), (0.0, math.inf), ex.ONE, V)

    @classmethod
    def logarithmic(cls, kappa: float = 1.0) -> "SystemSpec":
        if not kappa > 0:
            raise DomainError("logarithmic family needs kappa > 0")
        V = ex.neg(ex.mul(ex.Const(kappa), ex.Log(R)))
        return cls("logarithmic", (("kappa", float(kappa)),), (0.0, math.inf), ex.ONE, V)

    @classmethod
    def schwarzschild(cls, M: float = 1.0, E: float = 0.98) -> "SystemSpec":
        if not M > 0:
            raise DomainError("Schwarzschild mass must be positive")
        if not 0 < E < 1:
            raise DomainError("Schwarzschild particle energy must lie in (0, 1)")
        alpha = ex.sub(ex.ONE, ex.div(ex.Const(2.0 * M), R))
        V = ex.div(ex.Const(0.5 * E * E), alpha)
        return cls("schwarzschild", (("M", float(M)), ("E", float(E))), (2.0 * M, math.inf), alpha, V)

    @classmethod
    def custom(cls, alpha: str | Expr, V: str | Expr, domain=(0.0, math.inf)) -> "SystemSpec":
        alpha_e, V_e = ex.as_expr(alpha), ex.as_expr(V)
        for name, e in (("alpha", alpha_e), ("V", V_e)):
            extra = ex.free_variables(e) - {"r"}
            if extra:
                raise DomainError(f"{name} may only depend on r, found {sorted(extra)}")
        lo, hi = float(domain[0]), float(domain[1])
        if not 0 <= lo < hi:
            raise DomainError("custom domain must be an interval inside (0, inf)")
        text = (str(alpha), str(V)) if isinstance(alpha, str) and isinstance(V, str) else (str(alpha_e), str(V_e))
        return cls("custom", (), (lo, hi), alpha_e, V_e, text)

    # -- parameters -------------------------------------------------------------
    def param(self, name: str) -> float:
        return dict(self.params)[name]

    @property
    def M(self) -> float:
        return self.param("M")

    @property
    def E(self) -> float:
        return self.param("E")

    def describe(self) -> dict:
        out = {"family": self.family, **dict(self.params)}
        if self.family == "custom":
            out.update(alpha=self.custom_text[0], V=self.custom_text[1], domain=list(self.domain))
        return out

    # -- domain -----------------------------------------------------------------
    def contains(self, r) -> bool:
        lo, hi = self.domain
        r = np.asarray(r)
        return bool(np.all((r > lo) & (r < hi)))

    def check_domain(self, r):
        if not self.contains(r):
            raise DomainError(f"radius {r!r} outside the admissible interval {self.domain}")

    # -- evaluation ---------------------------------------------------------------
    def eval(self, r) -> SystemValues:
        a, V = self.derivatives(r, 1)
        return SystemValues(a[0], a[1], V[0], V[1])

    def derivatives(self, r, order: int = 3):
        """Return ``(alpha^(k), V^(k))`` for ``k = 0..order`` as two lists."""
        self.check_domain(r)
        r = np.asarray(r, dtype=float) if np.ndim(r) else float(r)
        fam = self.family
        if fam == "custom":
            env = {"r": r}
            alpha = [_broadcast(ex.evaluate(e, env), r) for e in self._alpha_derivs[: order + 1]]
            V = [_broadcast(ex.evaluate(e, env), r) for e in self._V_derivs[: order + 1]]
            return alpha, V
        one = np.ones_like(r) if np.ndim(r) else 1.0
        if fam == "schwarzschild":
            M, E = self.M, self.E
            alpha = [1.0 - 2.0 * M / r] + [
                -_falling(-1.0, k) * 2.0 * M * r ** (-1.0 - k) for k in range(1, order + 1)
            ]
            x = r - 2.0 * M
            c = 0.5 * E * E
            # E^2 r / (2 (r - 2M)) = c + 2 c M / (r - 2M)
            V = [c + 2.0 * c * M / x] + [
                2.0 * c * M * _falling(-1.0, k) * x ** (-1.0 - k) for k in range(1, order + 1)
            ]
            return alpha, V
        alpha = [one] + [0.0 * one] * order
        if fam == "levi_civita":
            k_, lam = self.param("kappa"), self.param("lambda")
            V = [
                k_ * _falling(-1.0, k) * r ** (-1.0 - k) + lam * _falling(-2.0, k) * r ** (-2.0 - k)
                for k in range(order + 1)
            ]
        elif fam == "homogeneous":
            k_, a = self.param("kappa"), self.param("a")
            V = [k_ / a * _falling(-a, k) * r ** (-a - k) for k in range(order + 1)]
        elif fam == "logarithmic":
            k_ = self.param("kappa")
            V = [-k_ * np.log(r)] + [-k_ * _falling(-1.0, k - 1) * r ** (-float(k)) for k in range(1, order + 1)]
        else:  # pragma: no cover
            raise DomainError(f"unknown family {fam}")
        return alpha, V

    @cached_property
    def _alpha_derivs(self):
        out = [self.alpha_expr]
        for _ in range(6):
            out.append(ex.diff_expr(out[-1], "r"))
        return out

    @cached_property
    def _V_derivs(self):
        out = [self.V_expr]
        for _ in range(6):
            out.append(ex.diff_expr(out[-1], "r"))
        return out

    # -- bounded-orbit region ----------------------------------------------------------
    def in_lambda(self, H: float, L: float):
        """Closed-form membership in the bounded-orbit region, or ``None`` if unknown.

        For the homogeneous family with ``a < 0`` the region is
        ``H > H_circ(L)`` with no upper bound (the potential is confining).
        """
        if not L > 0:
            return False
        fam = self.family
        if fam == "levi_civita":
            k_, lam = self.param("kappa"), self.param("lambda")
            return bool(L * L > 2 * lam and -k_ * k_ / (2 * (L * L - 2 * lam)) < H < 0)
        if fam == "homogeneous":
            k_, a = self.param("kappa"), self.param("a")
            h_circ = -(2 - a) / (2 * a) * k_ ** (2 / (2 - a)) * L ** (-2 * a / (2 - a))
            return bool(h_circ < H < 0) if a > 0 else bool(H > h_circ)
        if fam == "logarithmic":
            k_ = self.param("kappa")
            return bool(H > 0.5 * k_ + k_ * math.log(L / math.sqrt(k_)))
        if fam == "schwarzschild":
            from .schwarzschild import lambdaE_contains

            return lambdaE_contains(H, L, self.E, self.M)
        return None


def _broadcast(v, r):
    if np.ndim(r):
        return np.broadcast_to(np.asarray(v, dtype=float), np.shape(r)).copy()
    return float(v)


def eval_system(spec: SystemSpec, r) -> SystemValues:
    """``alpha, alpha', V, V'`` at ``r``; raises :class:`DomainError` outside the domain."""
    return spec.eval(r)


def unperturbed_hamiltonian(spec: SystemSpec, state) -> float:
    r, _, pr, pth = state
    a, _, V, _ = spec.eval(r)
    return 0.5 * (a * pr * pr + pth * pth / (r * r)) - V


# -- perturbations ---------------------------------------------------------------------


@dataclass(frozen=True)
class PerturbationSpec:
    """A Hamiltonian field ``Htilde(r, theta, pr, ptheta)`` or metric entries ``l11, l13, l33``."""

    kind: str
    epsilon: float = 0.0
    field: Expr = ex.ZERO
    l11: Expr = ex.ZERO
    l13: Expr = ex.ZERO
    l33: Expr = ex.ZERO

    @classmethod
    def hamiltonian(cls, field, epsilon: float = 0.0) -> "PerturbationSpec":
        return cls("hamiltonian", float(epsilon), field=ex.as_expr(field))

    @classmethod
    def metric(cls, l11="0", l13="0", l33="0", epsilon: float = 0.0) -> "PerturbationSpec":
        entries = [ex.as_expr(e) for e in (l11, l13, l33)]
        for name, e in zip(("l11", "l13", "l33"), entries):
            extra = ex.free_variables(e) - {"r", "theta"}
            if extra:
                raise DomainError(f"metric entry {name} may only depend on r and theta, found {sorted(extra)}")
        return cls("metric", float(epsilon), l11=entries[0], l13=entries[1], l33=entries[2])

    def __post_init__(self):
        if self.kind not in ("hamiltonian", "metric"):
            raise DomainError(f"unknown perturbation kind {self.kind!r}")

    def with_epsilon(self, epsilon: float) -> "PerturbationSpec":
        return PerturbationSpec(self.kind, float(epsilon), self.field, self.l11, self.l13, self.l33)

    @property
    def is_trivial(self) -> bool:
        if self.epsilon == 0.0:
            return True
        if self.kind == "hamiltonian":
            return self.field == ex.ZERO
        return self.l11 == ex.ZERO and self.l13 == ex.ZERO and self.l33 == ex.ZERO

    def describe(self) -> dict:
        if self.kind == "hamiltonian":
            return {"kind": "hamiltonian", "epsilon": self.epsilon, "field": str(self.field)}
        return {"kind": "metric", "epsilon": self.epsilon, "l11": str(self.l11), "l13": str(self.l13), "l33": str(self.l33)}


NO_PERTURBATION = PerturbationSpec("hamiltonian", 0.0)


def hamiltonian_expr(spec: SystemSpec, pert: PerturbationSpec | None = None):
    """Return ``(H, a11, det)`` as expressions; ``a11``/``det`` guard metric positivity."""
    h0 = ex.sub(
        ex.mul(ex.Const(0.5), ex.add(ex.mul(spec.alpha_expr, ex.pow_frac(PR, ex.Fraction(2))),
                                     ex.div(ex.pow_frac(PTHETA, ex.Fraction(2)), ex.pow_frac(R, ex.Fraction(2))))),
        spec.V_expr,
    )
    if pert is None or pert.is_trivial:
        return h0, ex.ONE, ex.ONE
    eps = ex.Const(pert.epsilon)
    if pert.kind == "hamiltonian":
        return ex.add(h0, ex.mul(eps, pert.field)), ex.ONE, ex.ONE
    a11 = ex.add(ex.div(ex.ONE, spec.alpha_expr), ex.mul(eps, pert.l11))
    a13 = ex.mul(eps, pert.l13)
    a33 = ex.add(ex.pow_frac(R, ex.Fraction(2)), ex.mul(eps, pert.l33))
    det = ex.sub(ex.mul(a11, a33), ex.pow_frac(a13, ex.Fraction(2)))
    quad = ex.add(
        ex.sub(ex.mul(a33, ex.pow_frac(PR, ex.Fraction(2))), ex.mul(ex.Const(2.0), ex.mul(a13, ex.mul(PR, PTHETA)))),
        ex.mul(a11, ex.pow_frac(PTHETA, ex.Fraction(2))),
    )
    h = ex.sub(ex.mul(ex.Const(0.5), ex.div(quad, det)), spec.V_expr)
    return h, a11, det


class HamiltonianSystem:
    """Compiled perturbed Hamiltonian.

    ``program`` outputs ``[H, dH/dr, dH/dtheta, dH/dpr, dH/dptheta, a11, det]``;
    the last two are positivity guards for metric perturbations (``1`` otherwise).
    """

    def __init__(self, spec: SystemSpec, pert: PerturbationSpec | None = None):
        self.spec = spec
        self.pert = pert if pert is not None else NO_PERTURBATION
        h, a11, det = hamiltonian_expr(spec, self.pert)
        self.expr = h
        self.gradient_exprs = tuple(ex.diff_expr(h, v) for v in ex.VARIABLES)
        self.program = ex.compile_program([h, *self.gradient_exprs, a11, det])
        if not self.pert.is_trivial:
            check_periodicity(spec, self.pert)

    def outputs(self, state) -> np.ndarray:
        from . import core

        self.spec.check_domain(state[0])
        return core.backend.eval_program(self.program, np.asarray(state, dtype=float))

    def __call__(self, state):
        """Return ``(H, gradient)``; raises on domain exit or a degenerate metric."""
        out = self.outputs(state)
        if not (out[5] > 0 and out[6] > 0):
            raise SingularMetric(f"momentum matrix not positive definite at {tuple(state)} (det={out[6]:.3g})")
        return float(out[0]), out[1:5].copy()

    def energy(self, state) -> float:
        return self(state)[0]


@lru_cache(maxsize=64)
def build_system(spec: SystemSpec, pert: PerturbationSpec | None = None) -> HamiltonianSystem:
    return HamiltonianSystem(spec, pert)


def perturbed_hamiltonian(spec: SystemSpec, pert: PerturbationSpec | None, state):
    """Value and exact gradient ``(d/dr, d/dtheta, d/dpr, d/dptheta)`` of ``H_eps``."""
    return build_system(spec, pert)(state)


def _sample_radii(spec: SystemSpec, rng, n: int):
    lo, hi = spec.domain
    if math.isfinite(hi):
        return rng.uniform(lo + 0.05 * (hi - lo), hi - 0.05 * (hi - lo), n)
    base = max(lo, 0.0)
    scale = max(lo, 1.0)
    return base + scale * rng.uniform(0.5, 20.0, n)


def check_periodicity(spec: SystemSpec, pert: PerturbationSpec, n: int = 16, rtol: float = 1e-12):
    """Sample ``theta`` and ``theta + 2 pi`` at random points and compare the perturbation."""
    rng = np.random.default_rng(20240611)
    rs = _sample_radii(spec, rng, n)
    th = rng.uniform(-math.pi, math.pi, n)
    pr = rng.uniform(-1.0, 1.0, n)
    pt = rng.uniform(0.1, 3.0, n)
    fields = [pert.field] if pert.kind == "hamiltonian" else [pert.l11, pert.l13, pert.l33]
    for e in fields:
        if not ex.free_variables(e) & {"theta"}:
            continue
        for k in range(n):
            env = {"r": rs[k], "theta": th[k], "pr": pr[k], "ptheta": pt[k]}
            try:
                v0 = ex.evaluate(e, env)
                v1 = ex.evaluate(e, {**env, "theta": th[k] + 2 * math.pi})
            except ex.ExprDomainError:
                continue
            if abs(v1 - v0) > rtol * max(1.0, abs(v0)):
                raise DomainError(f"perturbation {e} is not 2*pi-periodic in theta")
