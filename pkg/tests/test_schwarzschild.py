import math

import numpy as np
import pytest

from apsidal.errors import DomainError
from apsidal.radial import schw_critical_points, schw_W
from apsidal.schwarzschild import (L_E, dense_resonance_scan, dL_omega0, lambdaE_contains, limit_dTheta_dL,
                                   limit_P, omega0, omega0_direct, omega_derivs, zeta, zeta_inv, zeta_prime)
from apsidal.model import SystemSpec
from apsidal.timemaps import HMap, apsidal_angle, regularized_P
from helpers import richardson_derivative

U_MIN = 4 * math.sqrt(2)


def test_zeta_range_endpoints():
    assert zeta(U_MIN + 1e-6) == pytest.approx(25 / 27, abs=1e-3)
    assert zeta(1e6) == pytest.approx(1.0, abs=1e-6)


def test_zeta_value_at_six():
    s12 = math.sqrt(12)
    assert zeta(6.0) == pytest.approx((608 + 168 * s12) / (648 + 180 * s12), rel=1e-15)
    assert zeta(6.0) == pytest.approx(0.935850, abs=1e-6)


def test_zeta_is_increasing_and_bounded():
    us = np.geomspace(U_MIN + 1e-3, 1e3, 50)
    assert np.all(zeta_prime(us) > 0)
    vals = zeta(us)
    assert np.all(np.diff(vals) > 0)
    assert np.all((vals > 25 / 27) & (vals < 1))


def test_zeta_prime_matches_finite_differences():
    for u in (5.8, 6.0, 8.0, 20.0):
        assert zeta_prime(u) == pytest.approx(richardson_derivative(zeta, u, 1e-4), rel=1e-8)


def test_zeta_inverse_round_trips():
    rng = np.random.default_rng(4)
    for u in U_MIN + np.exp(rng.uniform(-6, 5, 100)):
        assert zeta_inv(zeta(u)) == pytest.approx(u, rel=1e-11)
    for y in np.linspace(0.9260, 0.9999, 40):
        assert zeta(zeta_inv(y)) == pytest.approx(y, abs=1e-12)


@pytest.mark.parametrize("bad", [U_MIN, 3.0])
def test_zeta_domain(bad):
    with pytest.raises(DomainError):
        zeta(bad)


@pytest.mark.parametrize("bad", [25 / 27, 1.0, 0.5])
def test_zeta_inverse_domain(bad):
    with pytest.raises(DomainError):
        zeta_inv(bad)


def test_omega0_homogeneity_against_direct_minimum():
    for H in np.linspace(-0.9, -0.1, 10):
        thr = U_MIN * math.sqrt(-H)
        for L in thr * np.linspace(1.01, 3.0, 10):
            a, b = omega0(H, L, 1.0), omega0_direct(H, L, 1.0)
            assert a == pytest.approx(b, rel=1e-12)
            assert H < a < 0


def test_omega0_example():
    assert omega0(-0.5, 5.0, 1.0) == pytest.approx(-0.5 * zeta(5 * math.sqrt(2)), rel=1e-15)


def test_omega0_derivative():
    for L in (4.5, 6.0):
        fd = richardson_derivative(lambda x: omega0(-0.5, x, 1.0), L, 1e-4)
        assert dL_omega0(-0.5, L, 1.0) == pytest.approx(fd, rel=1e-8)


def test_omega0_outside_region():
    with pytest.raises(DomainError):
        omega0(-0.5, 3.9, 1.0)


def test_L_E_near_lower_energy():
    E = math.sqrt(25 / 27 + 1e-6)
    assert L_E(E, 1.0) == pytest.approx(4.0, abs=1e-2)


def test_L_E_is_circular_orbit_at_energy():
    # the circular orbit at L_E has W(r_zero) = E^2 / 2
    for M in (1.0, 2.5):
        L = L_E(0.98, M)
        r0 = schw_critical_points(-0.5, L, M)["r_zero"]
        assert schw_W(r0, -0.5, L, M) == pytest.approx(0.5 * 0.98**2, rel=1e-12)


def test_lambda_E_membership():
    mid = 0.5 * (4 + L_E(0.98, 1.0))
    assert lambdaE_contains(-0.5, mid, 0.98, 1.0)
    assert not lambdaE_contains(-0.5, 4.0, 0.98, 1.0)
    assert not lambdaE_contains(-0.5, L_E(0.98, 1.0) + 1e-9, 0.98, 1.0)
    with pytest.raises(DomainError):
        lambdaE_contains(-0.5, mid, 0.5, 1.0)


def test_omega_derivative_examples():
    d = omega_derivs(4.0, 1.0)
    assert d.omega2 == pytest.approx(8.0, rel=1e-15)
    assert d.omega3 == pytest.approx(-96.0, rel=1e-15)
    assert d.omega4 == 0.0
    with pytest.raises(DomainError):
        omega_derivs(3.0, 1.0)


def big_omega(u, L, M):
    return schw_W(1.0 / u, -0.5, L, M) + omega0(-0.5, L, M)


def fd_derivatives(f, x, h):
    """Second, third and fourth derivatives from fourth-order central stencils."""
    v = {k: f(x + k * h) for k in range(-3, 4)}
    d2 = (-v[2] + 16 * v[1] - 30 * v[0] + 16 * v[-1] - v[-2]) / (12 * h * h)
    d3 = (-v[3] + 8 * v[2] - 13 * v[1] + 13 * v[-1] - 8 * v[-2] + v[-3]) / (8 * h**3)
    d4 = (-v[3] + 12 * v[2] - 39 * v[1] + 56 * v[0] - 39 * v[-1] + 12 * v[-2] - v[-3]) / (6 * h**4)
    return d2, d3, d4


@pytest.mark.parametrize("M", [1.0, 1.7])
def test_omega_derivatives_against_finite_differences(M):
    for x in (4.1, 4.6, 5.2):
        L = x * M
        u0 = 1.0 / schw_critical_points(-0.5, L, M)["r_zero"]
        d = omega_derivs(L, M)
        d2, d3, _ = fd_derivatives(lambda u: big_omega(u, L, M), u0, 1e-2 * u0)
        # Omega is a cubic in u, so a wide stencil keeps rounding out of the fourth derivative
        _, _, d4 = fd_derivatives(lambda u: big_omega(u, L, M), u0, 0.2 * u0)
        assert big_omega(u0, L, M) == pytest.approx(0.0, abs=1e-14)
        assert d2 == pytest.approx(d.omega2, rel=1e-5)
        assert d3 == pytest.approx(d.omega3, rel=1e-5)
        assert abs(d4 - d.omega4) <= 1e-3
        dd = richardson_derivative(lambda LL: omega_derivs(LL, M).omega2, L, 1e-4 * L)
        assert d.d_omega2_dL == pytest.approx(dd, rel=1e-8)


def test_omega2_positive_on_working_interval():
    for L in np.linspace(4 + 1e-3, L_E(0.98, 1.0) - 1e-3, 50):
        assert omega_derivs(L, 1.0).omega2 > 0


def test_h_map_slope_at_minimum():
    spec = SystemSpec.schwarzschild(1.0, 0.98)
    for L in (4.3, 5.0):
        hm = HMap(spec, -0.5, L)
        h1 = float(hm.h_derivs(np.array([0.0]), 1)[1][0])
        assert h1 == pytest.approx(math.sqrt(omega_derivs(L, 1.0).omega2 / 2), rel=1e-12)


def test_limit_of_P():
    LE = L_E(0.98, 1.0)
    spec = SystemSpec.schwarzschild(1.0, 0.98)
    assert regularized_P(spec, -0.5, LE - 1e-6) == pytest.approx(limit_P(0.98, 1.0), rel=1e-3)
    assert apsidal_angle(spec, -0.5, LE - 1e-6) / (LE - 1e-6) == pytest.approx(limit_P(0.98, 1.0), rel=1e-3)


@pytest.mark.parametrize("E", [0.965, 0.97, 0.98, 0.99])
def test_limit_slope_is_negative(E):
    assert limit_dTheta_dL(E, 1.0) < 0


def test_dense_scan_entries():
    found = dense_resonance_scan(0.98, 1.0, 3, n_grid=60)
    assert [(d["p"], d["q"]) for d in found] == [(3, 2), (4, 3)]
    spec = SystemSpec.schwarzschild(1.0, 0.98)
    for d in found:
        assert math.gcd(d["p"], d["q"]) == 1
        assert abs(apsidal_angle(spec, -0.5, d["L"]) - 2 * math.pi * d["p"] / d["q"]) <= 1e-9 * 2 * math.pi
        assert d["flagged"] or abs(d["dTheta_dL"]) > 3 * d["dTheta_dL_error"]
        assert d["verdict"] == "nondegenerate"


def test_dense_scan_domain():
    with pytest.raises(DomainError):
        dense_resonance_scan(0.98, 1.0, 0)
    with pytest.raises(DomainError):
        dense_resonance_scan(0.9, 1.0, 2)
