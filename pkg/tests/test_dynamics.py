import math

import numpy as np
import pytest

from apsidal.dynamics import (PeriodicOrbitRecord, _make_record, SectionPoint, classify_trace, epsilon_ladder,
                              find_periodic_points, integrate, map_power, parallel_map, return_map,
                              rotation_number, same_class, section_jacobian, section_lift, twist_deviation,
                              verify_closed_orbit)
from apsidal.errors import NoResonance, NoSectionRoot, NotCoprime, VerificationFailed
from apsidal.model import PerturbationSpec, SystemSpec
from apsidal.radial import find_turning_points
from apsidal.timemaps import apsidal_angle, radial_period

TWO_PI = 2 * math.pi
LC = SystemSpec.levi_civita(1.0, 0.1)
KEPLER = SystemSpec.kepler(1.0)
FIELD = PerturbationSpec.hamiltonian("-r*cos(theta)", 1e-3)
H_STAR = -0.3


def test_kepler_orbit_closes_after_one_period():
    state = section_lift(KEPLER, None, 0.0, 1.0, -0.125)
    T = radial_period(KEPLER, -0.125, 1.0)
    traj = integrate(KEPLER, None, state, (0.0, T))
    end = traj.y[-1]
    assert abs(end[0] - state[0]) <= 1e-9 and abs(end[2]) <= 1e-9
    assert end[1] == pytest.approx(TWO_PI, abs=1e-9)


def test_energy_and_angular_momentum_over_many_periods():
    H, L = H_STAR, 0.7
    state = section_lift(LC, None, 0.0, L, H)
    traj = integrate(LC, None, state, (0.0, 100 * radial_period(LC, H, L)))
    assert traj.energy_drift <= 1e-9 * abs(H)
    assert np.max(np.abs(traj.y[:, 3] - L)) <= 1e-12
    assert len(traj.event_t) == 100


def test_dense_output_matches_step_values():
    state = section_lift(LC, None, 0.0, 0.7, H_STAR)
    traj = integrate(LC, None, state, (0.0, 10.0))
    for k in (3, 10, len(traj.t) - 1):
        assert np.allclose(traj(traj.t[k]), traj.y[k], rtol=1e-13, atol=1e-13)


def test_section_lift_unperturbed_is_inner_turning_point():
    for L in (0.5, 0.6, 0.9):
        r = section_lift(LC, None, 1.0, L, H_STAR)[0]
        assert r == pytest.approx(find_turning_points(LC, H_STAR, L).r_minus, abs=1e-11)


def test_section_lift_moves_by_order_epsilon():
    for th in np.linspace(0, TWO_PI, 7):
        r0 = section_lift(LC, None, th, 0.6, H_STAR)[0]
        r1 = section_lift(LC, FIELD, th, 0.6, H_STAR)[0]
        assert abs(r1 - r0) <= 10 * FIELD.epsilon


def test_section_lift_without_orbit():
    with pytest.raises(NoSectionRoot):
        section_lift(LC, None, 0.0, 0.6, 0.2)


def test_unperturbed_return_is_twist_map():
    for L in np.linspace(0.5, 1.2, 10):
        res = return_map(LC, None, SectionPoint(0.4, L), H_STAR)
        assert res.delta_theta == pytest.approx(apsidal_angle(LC, H_STAR, L), abs=1e-8)
        assert abs(res.s_next.p_theta - L) <= 1e-12
    res = return_map(LC, None, SectionPoint(0.0, 0.6), H_STAR)
    assert res.delta_theta == pytest.approx(3 * math.pi, abs=1e-8)


@pytest.mark.parametrize("eps", [0.0, 1e-3])
def test_return_map_preserves_area(eps):
    rng = np.random.default_rng(1)
    pert = FIELD.with_epsilon(eps)
    for _ in range(4):
        th, L = rng.uniform(0, TWO_PI), rng.uniform(0.5, 1.0)
        J = section_jacobian(LC, pert, th, L, H_STAR)
        assert abs(np.linalg.det(J) - 1) <= 1e-6


def test_twist_deviation_vanishes_without_perturbation():
    mu1, mu2 = twist_deviation(LC, None, SectionPoint(0.2, 0.7), H_STAR)
    assert abs(mu1) <= 1e-8 and abs(mu2) <= 1e-8


def test_twist_deviation_scales_linearly():
    ratios = []
    for th in np.linspace(0, TWO_PI, 20, endpoint=False):
        s = SectionPoint(th, 0.7)
        a = np.hypot(*twist_deviation(LC, FIELD, s, H_STAR))
        b = np.hypot(*twist_deviation(LC, FIELD.with_epsilon(5e-4), s, H_STAR))
        ratios.append(b / a)
    assert all(0.3 <= r <= 0.7 for r in ratios)


def test_angle_free_perturbation_keeps_angular_momentum():
    pert = PerturbationSpec.hamiltonian("0.5*pr^2*r + 1/r^2", 1e-3)
    _, mu2 = twist_deviation(LC, pert, SectionPoint(0.3, 0.7), H_STAR)
    assert abs(mu2) <= 1e-10


def test_rotation_numbers():
    assert rotation_number(LC, None, SectionPoint(0.0, 0.6), H_STAR, 100) == pytest.approx(1.5, abs=1e-8)
    assert rotation_number(KEPLER, None, SectionPoint(0.0, 1.0), -0.125, 100) == pytest.approx(1.0, abs=1e-8)
    rho = [rotation_number(LC, None, SectionPoint(0.0, L), H_STAR, 100) for L in np.linspace(0.5, 1.2, 10)]
    assert np.all(np.diff(rho) < 0)


def test_unperturbed_resonance_is_reported_degenerate():
    found = find_periodic_points(LC, None, H_STAR, 3, 2, seed_count=4)
    assert len(found) == 0 and found.degenerate
    assert found.L_star == pytest.approx(0.6, abs=1e-12)


def test_search_argument_errors():
    with pytest.raises(NotCoprime):
        find_periodic_points(LC, FIELD, H_STAR, 6, 4)
    with pytest.raises(NoResonance):
        find_periodic_points(LC, FIELD, H_STAR, 1, 1)


def torus_record(theta=0.5):
    return _make_record(LC, None, H_STAR, 3, 2, theta, 0.6, 0.0, 0)


def test_resonant_torus_orbit_closes():
    rec = torus_record()
    assert rec.minimal_period == pytest.approx(2 * radial_period(LC, H_STAR, 0.6), rel=1e-10)
    assert rec.class_tag == "parabolic"
    rep = verify_closed_orbit(LC, None, rec, H_STAR)
    assert rep.passed and rep.events == 2 and rep.winding == 2
    assert rep.closure <= 1e-8 and rep.theta_advance_error <= 1e-8


def test_corrupted_record_fails_verification():
    rec = torus_record()
    sp = rec.section_point
    bad = PeriodicOrbitRecord(SectionPoint(sp.theta_lift, sp.p_theta + 1e-3), rec.q, rec.p, rec.minimal_period,
                              0.0, rec.stability_trace, rec.class_tag, 0.0, 0)
    with pytest.raises(VerificationFailed):
        verify_closed_orbit(LC, None, bad, H_STAR)


@pytest.fixture(scope="module")
def lc_search():
    return find_periodic_points(LC, FIELD, H_STAR, 3, 2, seed_count=8)


def test_perturbed_search_finds_two_classes(lc_search):
    assert len(lc_search) >= 2
    tags = {rec.class_tag for rec in lc_search}
    assert tags == {"elliptic", "hyperbolic"}
    for rec in lc_search:
        assert rec.residual <= 1e-10
        assert math.gcd(rec.p, rec.q) == 1
        x = map_power(LC, FIELD, rec.section_point.theta_lift, rec.section_point.p_theta, H_STAR, 2)
        assert abs(x[0] - rec.section_point.theta_lift - 6 * math.pi) <= 1e-9


def test_iterates_form_one_class(lc_search):
    for rec in lc_search:
        classes = []
        for th, pt in rec.iterates:
            if not any(same_class(c, th, pt) for c in classes):
                classes.append(rec.iterates)
        assert len(classes) == 1


def test_search_is_independent_of_thread_count(lc_search):
    again = find_periodic_points(LC, FIELD, H_STAR, 3, 2, seed_count=8, threads=1)
    assert [r.as_dict() for r in again] == [r.as_dict() for r in lc_search]


def test_parallel_map_preserves_order():
    assert parallel_map(lambda x: x * x, range(20), 4) == [x * x for x in range(20)]


def test_trace_classification_and_ladder():
    assert classify_trace(1.5) == "elliptic"
    assert classify_trace(2.5) == "hyperbolic"
    assert classify_trace(2.0 + 1e-10) == "parabolic"
    assert epsilon_ladder(1e-3) == [1e-3, 5e-4, 2.5e-4, 1.25e-4]
