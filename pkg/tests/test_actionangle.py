import math

import pytest

from apsidal.actionangle import frequencies, isoenergetic_determinant, psi
from apsidal.model import SystemSpec
from apsidal.timemaps import apsidal_angle, default_bracket, nondegeneracy, radial_period, resonance_find
from helpers import interior_grid

TWO_PI = 2 * math.pi
LC = SystemSpec.levi_civita(1.0, 0.1)
KEPLER = SystemSpec.kepler(1.0)


def test_kepler_actions():
    I1, I2 = psi(KEPLER, -0.125, 1.0)
    assert I1 == pytest.approx(2.0, rel=1e-12)
    assert I2 == 1.0


def test_second_action_is_angular_momentum():
    for H, L in interior_grid(LC, [-0.3], 4):
        assert psi(LC, H, L)[1] == L


def test_first_action_grows_with_energy():
    for H, L in interior_grid(LC, [-0.4, -0.2], 3):
        h = 1e-5
        dI = (psi(LC, H + h, L)[0] - psi(LC, H - h, L)[0]) / (2 * h)
        assert dI == pytest.approx(radial_period(LC, H, L) / TWO_PI, rel=1e-6)
        assert dI > 0


def test_kepler_frequency_ratio():
    f = frequencies(KEPLER, -0.125, 1.0)
    assert abs(f.ratio) < 1e-12
    assert f.dK0_dI1 == pytest.approx(TWO_PI / (16 * math.pi), rel=1e-12)


def test_levi_civita_resonant_frequencies():
    f = frequencies(LC, -0.3, 0.6, n1=2)
    assert f.ratio == pytest.approx(0.5, abs=1e-12)
    assert f.tau_star == pytest.approx(2 * radial_period(LC, -0.3, 0.6), rel=1e-14)
    assert f.dK0_dI2 / f.dK0_dI1 == pytest.approx(f.ratio, rel=1e-13)


def test_ratio_identity_holds_to_rounding():
    for spec, Hs in [(LC, [-0.3]), (SystemSpec.logarithmic(1.0), [0.5]), (SystemSpec.schwarzschild(1.0, 0.98), [-0.5])]:
        for H, L in interior_grid(spec, Hs, 3):
            f = frequencies(spec, H, L)
            assert f.ratio + 1 == pytest.approx(apsidal_angle(spec, H, L) / TWO_PI, rel=1e-15)


@pytest.mark.parametrize("p,q", [(3, 2), (5, 4), (7, 5)])
def test_resonant_ratio_is_rational(p, q):
    res = resonance_find(LC, -0.3, p, q, default_bracket(LC, -0.3))
    f = frequencies(LC, -0.3, res.L_star)
    assert abs(q * f.ratio - (p - q)) <= 1e-9


def test_frequencies_reject_bad_n1():
    with pytest.raises(ValueError):
        frequencies(LC, -0.3, 0.6, n1=0)


def test_isoenergetic_determinant_verdicts():
    rep = isoenergetic_determinant(LC, -0.3, 1.0)
    assert rep.value < 0 and rep.verdict == "nondegenerate"
    assert rep.value == pytest.approx(-0.4 * math.pi / 0.8**1.5 / TWO_PI, rel=1e-6)
    kep = isoenergetic_determinant(KEPLER, -0.2, 1.1)
    assert kep.verdict == "degenerate"


@pytest.mark.parametrize("spec,Hs", [(LC, [-0.3]), (SystemSpec.homogeneous(1.0, 0.5), [-1.0]),
                                     (SystemSpec.logarithmic(1.0), [0.5])])
def test_agreement_with_nondegeneracy(spec, Hs):
    for H, L in interior_grid(spec, Hs, 5):
        a = isoenergetic_determinant(spec, H, L)
        b = nondegeneracy(spec, H, L)
        assert math.copysign(1, a.value) == math.copysign(1, b.fixed_energy)
        assert a.verdict == b.fixed_energy_verdict
