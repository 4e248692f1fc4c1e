import math

import numpy as np
import pytest

from apsidal.errors import DomainError, NoBoundedOrbit
from apsidal.model import SystemSpec
from apsidal.radial import (OrbitParams, Z_derivatives, effective_Z, effective_Z_tilde, find_turning_points,
                            in_lambda_tilde, lambda_L_interval, schw_critical_points, schw_W, schw_W_prime)
from apsidal.schwarzschild import omega0
from helpers import interior_grid, richardson_derivative

SCHW = SystemSpec.schwarzschild(1.0, 0.98)
GRIDS = {
    "levi_civita": (SystemSpec.levi_civita(1.0, 0.1), [-0.5, -0.3, -0.1]),
    "kepler": (SystemSpec.kepler(1.0), [-0.5, -0.125]),
    "homogeneous_a05": (SystemSpec.homogeneous(1.0, 0.5), [-2.0, -1.0]),
    "homogeneous_a-1": (SystemSpec.homogeneous(1.0, -1.0), [0.5, 2.0]),
    "logarithmic": (SystemSpec.logarithmic(1.0), [0.0, 1.0]),
    "schwarzschild": (SCHW, [-0.51, -0.5, -0.49]),
}


def test_orbit_params_require_positive_L():
    with pytest.raises(DomainError, match="L > 0"):
        OrbitParams(-0.3, -1.0)


def test_effective_Z_examples():
    assert effective_Z(SystemSpec.kepler(1.0), 2.0, -0.125, 1.0) == pytest.approx(-0.25, abs=1e-16)
    # the horizon itself lies outside the working domain, so approach it from above
    z = effective_Z(SCHW, 2.0 + 1e-12, -0.5, 5.0)
    assert z == pytest.approx(-0.5 * 0.98**2, abs=1e-9)


def test_effective_Z_tilde():
    kep = SystemSpec.kepler(1.0)
    for r in (0.5, 1.0, 3.0):
        assert effective_Z_tilde(kep, r, -0.2, 1.0) == effective_Z(kep, r, -0.2, 1.0)
    a = 1 - 2 / 12
    assert a == pytest.approx(5 / 6)
    ref = ((0.5 * 25 / 144 - 0.98**2 / (2 * a) + 0.5) * a) / a**2
    assert effective_Z_tilde(SCHW, 12.0, -0.5, 5.0) == pytest.approx(ref, rel=1e-14)
    rng = np.random.default_rng(2)
    for r in rng.uniform(2.1, 200, 100):
        assert np.sign(effective_Z_tilde(SCHW, r, -0.5, 4.2)) == np.sign(effective_Z(SCHW, r, -0.5, 4.2))


def test_schw_W_identity_and_limits():
    for r in np.geomspace(2.5, 1e4, 30):
        z = effective_Z(SCHW, r, -0.5, 5.0)
        assert schw_W(r, -0.5, 5.0, 1.0) - 0.5 * 0.98**2 == pytest.approx(z, abs=1e-14)
    assert schw_W(1e8, -0.5, 5.0, 1.0) == pytest.approx(0.5, abs=1e-6)
    assert schw_W(2.0 + 1e-15, -0.5, 5.0, 1.0) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(DomainError):
        schw_W(2.0, -0.5, 5.0, 1.0)


def test_schw_critical_points_closed_form():
    cp = schw_critical_points(-0.5, 5.0, 1.0)
    assert cp["r_zero"] == pytest.approx((25 + 5 * math.sqrt(13)) / 2, rel=1e-15)
    assert cp["r_star"] == pytest.approx((25 - 5 * math.sqrt(13)) / 2, rel=1e-14)
    for r in cp.values():
        fd = richardson_derivative(lambda x: schw_W(x, -0.5, 5.0, 1.0), r, 1e-4 * r)
        assert abs(fd) < 1e-10
        assert abs(schw_W_prime(r, -0.5, 5.0, 1.0)) < 1e-14


def test_schw_critical_points_near_threshold():
    L = 4 * math.sqrt(2) + 1e-6
    cp = schw_critical_points(-0.5, L, 1.0)
    assert L * L - 16 == pytest.approx(16, rel=1e-6)
    assert cp["r_star"] < cp["r_zero"]


@pytest.mark.parametrize("H,L", [(-0.5, 4.0), (0.1, 5.0), (-0.5, 3.0)])
def test_schw_critical_points_outside_region(H, L):
    with pytest.raises(DomainError):
        schw_critical_points(H, L, 1.0)


def test_schw_critical_points_agree_with_generic_root_finding():
    from scipy.optimize import brentq

    for H in (-0.51, -0.5, -0.45):
        for L in (4.2, 5.0, 8.0):
            if not in_lambda_tilde(H, L, 1.0):
                continue
            cp = schw_critical_points(H, L, 1.0)
            f = lambda r: schw_W_prime(r, H, L, 1.0)  # noqa: E731
            rz = brentq(f, 0.5 * (cp["r_star"] + cp["r_zero"]), 10 * cp["r_zero"], xtol=1e-15, rtol=1e-15)
            rs = brentq(f, 2.0 + 1e-9, 0.5 * (cp["r_star"] + cp["r_zero"]), xtol=1e-15, rtol=1e-15)
            assert cp["r_zero"] == pytest.approx(rz, rel=1e-10)
            assert cp["r_star"] == pytest.approx(rs, rel=1e-10)
            Wz = schw_W(cp["r_zero"], H, L, 1.0)
            assert 0 < Wz < -H
            assert schw_W(cp["r_star"], H, L, 1.0) > -H


def test_minimum_of_W_is_minus_omega0():
    for H, L in [(-0.5, 5.0), (-0.49, 4.5), (-0.3, 6.0)]:
        r0 = schw_critical_points(H, L, 1.0)["r_zero"]
        assert schw_W(r0, H, L, 1.0) == pytest.approx(-omega0(H, L, 1.0), rel=1e-13)


def test_kepler_turning_points():
    tp = find_turning_points(SystemSpec.kepler(1.0), -0.125, 1.0)
    assert tp.r_minus == pytest.approx(4 - 2 * math.sqrt(3), rel=1e-13)
    assert tp.r_plus == pytest.approx(4 + 2 * math.sqrt(3), rel=1e-13)
    assert tp.r_zero == pytest.approx(1.0, rel=1e-8)
    assert tp.star_ok


def test_levi_civita_turning_points():
    spec = SystemSpec.levi_civita(1.0, 0.1)
    tp = find_turning_points(spec, -0.3, 0.6)
    assert tp.r_minus < tp.r_zero < tp.r_plus
    assert abs(effective_Z(spec, tp.r_minus, -0.3, 0.6)) <= 1e-11
    assert abs(effective_Z(spec, tp.r_plus, -0.3, 0.6)) <= 1e-11
    # closed form: r^2 H + r - (L^2 - 2 lam)/2 = 0
    c = (0.36 - 0.2) / 2
    disc = math.sqrt(1 - 4 * 0.3 * c)
    assert tp.r_minus == pytest.approx((1 - disc) / 0.6, rel=1e-13)
    assert tp.r_plus == pytest.approx((1 + disc) / 0.6, rel=1e-13)


def test_unbounded_energy_has_no_orbit():
    with pytest.raises(NoBoundedOrbit):
        find_turning_points(SystemSpec.kepler(1.0), 0.1, 1.0)


def test_circular_orbit_is_rejected():
    # Kepler circular orbit at L = 1 has H = -1/2
    with pytest.raises(NoBoundedOrbit):
        find_turning_points(SystemSpec.kepler(1.0), -0.5, 1.0)


def test_captured_schwarzschild_orbit_is_rejected():
    with pytest.raises(NoBoundedOrbit):
        find_turning_points(SystemSpec.schwarzschild(1.0, 0.999), -0.5, 3.9)


@pytest.mark.parametrize("name", sorted(GRIDS))
def test_bounded_orbit_hypothesis_on_grids(name):
    spec, Hs = GRIDS[name]
    for H, L in interior_grid(spec, Hs, 5, 0.1, 0.9):
        tp = find_turning_points(spec, H, L)
        assert abs(effective_Z(spec, tp.r_minus, H, L)) <= 1e-11
        assert abs(effective_Z(spec, tp.r_plus, H, L)) <= 1e-11
        z = Z_derivatives(spec, tp.r_zero, H, L, 2)
        assert z[0] < 0 < z[2]
        rs = np.linspace(tp.r_minus, tp.r_plus, 52)[1:-1]
        rs = rs[np.abs(rs - tp.r_zero) > 1e-9 * tp.r_zero]
        dz = Z_derivatives(spec, rs, H, L, 1)[1]
        assert np.all(dz * (rs - tp.r_zero) > 0)
        assert tp.report["conditions"]["in_region"] is True


def test_Z_derivatives_match_finite_differences():
    for spec, Hs in GRIDS.values():
        H, L = interior_grid(spec, Hs[:1], 1, 0.5, 0.5)[0]
        r = find_turning_points(spec, H, L).r_zero * 1.3
        z = Z_derivatives(spec, r, H, L, 3)
        for k in (1, 2, 3):
            fd = richardson_derivative(lambda x: Z_derivatives(spec, x, H, L, 3)[k - 1], r, 1e-4 * r)
            assert fd == pytest.approx(z[k], rel=1e-7, abs=1e-9)


def test_schwarzschild_report_flags_r_star_bound():
    tp = find_turning_points(SCHW, -0.5, 4.2)
    assert tp.report["conditions"]["r_zero_above_6M"] is True
    assert tp.report["notes"]["r_star_above_6M"] is False
    assert 3.0 < tp.report["notes"]["r_star"] <= 4.0


def test_lambda_interval_endpoints():
    spec = SystemSpec.levi_civita(1.0, 0.1)
    lo, hi = lambda_L_interval(spec, -0.3)
    assert lo == pytest.approx(math.sqrt(0.2))
    assert hi == pytest.approx(math.sqrt(0.2 + 1 / 0.6))
    assert lambda_L_interval(spec, 0.1) is None
