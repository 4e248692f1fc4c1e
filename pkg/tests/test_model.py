import math

import numpy as np
import pytest

from apsidal.errors import DomainError, SingularMetric
from apsidal.model import (PerturbationSpec, SystemSpec, build_system, eval_system, perturbed_hamiltonian,
                           unperturbed_hamiltonian)
from helpers import fd_gradient

FAMILIES = {
    "levi_civita": SystemSpec.levi_civita(1.3, 0.1),
    "kepler": SystemSpec.kepler(0.7),
    "homogeneous_neg": SystemSpec.homogeneous(1.2, -1.0),
    "homogeneous_frac": SystemSpec.homogeneous(0.8, 0.5),
    "logarithmic": SystemSpec.logarithmic(1.5),
    "schwarzschild": SystemSpec.schwarzschild(1.0, 0.98),
    "custom": SystemSpec.custom("1 - 2/r", "0.5*0.9604/(1 - 2/r)", (2.0, math.inf)),
}


def closed_form(spec, r):
    """Independent recomputation of ``alpha, alpha', V, V'``."""
    fam = spec.family
    if fam == "levi_civita":
        k, lam = spec.param("kappa"), spec.param("lambda")
        return 1.0, 0.0, k / r + lam / r**2, -k / r**2 - 2 * lam / r**3
    if fam == "homogeneous":
        k, a = spec.param("kappa"), spec.param("a")
        return 1.0, 0.0, k / (a * r**a), -k / r ** (a + 1)
    if fam == "logarithmic":
        k = spec.param("kappa")
        return 1.0, 0.0, -k * math.log(r), -k / r
    M, E = (spec.M, spec.E) if fam == "schwarzschild" else (1.0, 0.98)
    a = 1 - 2 * M / r
    return a, 2 * M / r**2, E * E / (2 * a), -E * E * M / (r * r * a * a)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_eval_system_matches_closed_forms(name):
    spec = FAMILIES[name]
    lo = spec.domain[0]
    for r in np.geomspace(max(lo, 0.0) + 0.3, max(lo, 0.0) + 60, 25):
        vals = eval_system(spec, r)
        ref = closed_form(spec, r)
        assert vals.alpha > 0
        for got, want in zip(vals, ref):
            assert got == pytest.approx(want, rel=1e-14, abs=1e-300)


def test_eval_system_examples():
    assert eval_system(SystemSpec.schwarzschild(1.0, 0.98), 4.0).alpha == 0.5
    assert eval_system(SystemSpec.levi_civita(1.0, 0.1), 1.0).V == pytest.approx(1.1, rel=1e-15)
    v = eval_system(SystemSpec.homogeneous(1.0, 1.0), 2.0)
    assert (v.V, v.dV) == (0.5, -0.25)


def test_harmonic_is_confining_quadratic():
    v = eval_system(SystemSpec.harmonic(1.0), 3.0)
    assert v.V == pytest.approx(-4.5, rel=1e-15)


@pytest.mark.parametrize("r", [2.0, 1.0, -1.0])
def test_outside_domain_is_rejected(r):
    spec = SystemSpec.schwarzschild(1.0, 0.98)
    with pytest.raises(DomainError):
        eval_system(spec, r)


def test_invalid_family_parameters():
    with pytest.raises(DomainError):
        SystemSpec.homogeneous(1.0, 2.5)
    with pytest.raises(DomainError):
        SystemSpec.levi_civita(-1.0, 0.1)
    with pytest.raises(DomainError):
        SystemSpec.schwarzschild(1.0, 1.2)


def random_states(spec, rng, n):
    lo = max(spec.domain[0], 0.0)
    out = []
    for _ in range(n):
        out.append([lo + rng.uniform(0.5, 10.0), rng.uniform(-math.pi, math.pi),
                    rng.uniform(-1, 1), rng.uniform(0.2, 3)])
    return np.array(out)


@pytest.mark.parametrize("name", sorted(FAMILIES))
def test_unperturbed_reduction(name, rng):
    spec = FAMILIES[name]
    for s in random_states(spec, rng, 20):
        h, g = perturbed_hamiltonian(spec, None, s)
        a, da, V, dV = closed_form(spec, s[0])
        h0 = 0.5 * (a * s[2] ** 2 + s[3] ** 2 / s[0] ** 2) - V
        assert h == pytest.approx(h0, rel=1e-14, abs=1e-14)
        assert h == pytest.approx(unperturbed_hamiltonian(spec, s), rel=1e-14, abs=1e-14)
        ref = [0.5 * da * s[2] ** 2 - s[3] ** 2 / s[0] ** 3 - dV, 0.0, a * s[2], s[3] / s[0] ** 2]
        assert np.allclose(g, ref, rtol=1e-13, atol=1e-14)


def test_zero_metric_perturbation_is_the_unperturbed_system(rng):
    spec = FAMILIES["schwarzschild"]
    zero = PerturbationSpec.metric(epsilon=0.3)
    for s in random_states(spec, rng, 20):
        h1, g1 = perturbed_hamiltonian(spec, zero, s)
        h0, g0 = perturbed_hamiltonian(spec, None, s)
        assert h1 == h0 and np.array_equal(g1, g0)


PERTURBATIONS = [
    (FAMILIES["levi_civita"], PerturbationSpec.hamiltonian("-r*cos(theta)", 1e-3)),
    (FAMILIES["levi_civita"], PerturbationSpec.hamiltonian("pr*ptheta*sin(2*theta)/r + exp(cos(theta))", 0.05)),
    (FAMILIES["schwarzschild"], PerturbationSpec.metric(l33="0.1*r^2*cos(theta)", epsilon=1e-3)),
    (FAMILIES["schwarzschild"], PerturbationSpec.metric(l11="0.1*cos(2*theta)", l13="0.2*sin(theta)/r",
                                                        l33="r*cos(theta)", epsilon=0.01)),
]


@pytest.mark.parametrize("spec,pert", PERTURBATIONS)
def test_gradient_matches_finite_differences(spec, pert, rng):
    system = build_system(spec, pert)
    for s in random_states(spec, rng, 100):
        _, g = system(s)
        fd = fd_gradient(system.energy, s)
        scale = max(1.0, np.max(np.abs(g)))
        assert np.max(np.abs(fd - g)) / scale < 1e-7


def test_metric_hamiltonian_uses_exact_inverse():
    spec = FAMILIES["schwarzschild"]
    eps = 0.02
    pert = PerturbationSpec.metric(l11="0.3", l13="0.1*r", l33="r^2*0.5", epsilon=eps)
    s = np.array([9.0, 0.4, 0.3, 4.0])
    r = s[0]
    A = np.array([[1 / (1 - 2 / r) + eps * 0.3, eps * 0.1 * r], [eps * 0.1 * r, r * r + eps * 0.5 * r * r]])
    p = s[[2, 3]]
    ref = 0.5 * p @ np.linalg.solve(A, p) - 0.98**2 / (2 * (1 - 2 / r))
    assert perturbed_hamiltonian(spec, pert, s)[0] == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("spec,pert", PERTURBATIONS)
def test_periodic_in_angle(spec, pert, rng):
    system = build_system(spec, pert)
    for s in random_states(spec, rng, 20):
        t = s.copy()
        t[1] += 2 * math.pi
        assert system.energy(t) == pytest.approx(system.energy(s), rel=1e-12, abs=1e-14)


def test_non_periodic_perturbation_is_rejected():
    with pytest.raises(DomainError):
        build_system(FAMILIES["levi_civita"], PerturbationSpec.hamiltonian("theta*r", 1e-3))


def test_indefinite_metric_is_reported():
    spec = FAMILIES["schwarzschild"]
    pert = PerturbationSpec.metric(l33="-r^2*(1 + 0.5*cos(theta))", epsilon=1.0)
    with pytest.raises(SingularMetric):
        perturbed_hamiltonian(spec, pert, [10.0, 0.0, 0.1, 4.0])
