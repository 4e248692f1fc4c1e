import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from apsidal.expr import (Cos, ExprDomainError, ExprSyntaxError, Mul, Pow, UnknownIdentifierError, Var,
                          compile_program, diff_expr, evaluate, format_expr, free_variables, parse_expr)
from helpers import VARS, derivative_mismatch, random_expr_text, random_point


def test_parse_product_of_power_and_cosine():
    assert parse_expr("r^2*cos(theta)") == Mul(Pow(Var("r"), Fraction(2)), Cos(Var("theta")))


def test_evaluate_simple_arithmetic():
    assert evaluate(parse_expr("1 - 2/r"), {"r": 4.0}) == 0.5


def test_precedence_and_associativity():
    env = {"r": 2.0}
    assert evaluate(parse_expr("-r^2"), env) == -4.0
    assert evaluate(parse_expr("2^3^2"), env) == 512.0
    assert evaluate(parse_expr("8/2/2"), env) == 2.0
    assert evaluate(parse_expr("1 - 2 - 3"), env) == -4.0
    assert evaluate(parse_expr("1 + 2*3"), env) == 7.0


def test_unbalanced_parenthesis_reports_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse_expr("sin(theta")
    # the offset points at the parenthesis that is never closed
    assert info.value.offset == 3


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as info:
        parse_expr("r + phi")
    assert info.value.name == "phi"
    assert info.value.offset == 4


@pytest.mark.parametrize("text", ["", "r +", "2 ** r", "sin()", "r 2", "1.2.3"])
def test_malformed_text_is_rejected(text):
    with pytest.raises(ExprSyntaxError):
        parse_expr(text)


def test_non_half_integer_exponent_becomes_exp_log():
    e = parse_expr("r^0.3")
    assert not isinstance(e, Pow)
    assert evaluate(e, {"r": 2.5}) == pytest.approx(2.5**0.3, rel=1e-15)


def test_half_integer_exponent_is_kept():
    e = parse_expr("r^1.5")
    assert isinstance(e, Pow) and e.exponent == Fraction(3, 2)


def test_derivative_of_sine():
    assert diff_expr(parse_expr("sin(theta)"), "theta") == Cos(Var("theta"))


def test_derivative_of_schwarzschild_lapse():
    assert evaluate(diff_expr(parse_expr("1 - 2/r"), "r"), {"r": 2.0}) == pytest.approx(0.5, rel=1e-15)


def test_derivative_matches_central_difference():
    e = parse_expr("r^3*cos(theta)")
    d = evaluate(diff_expr(e, "r"), {"r": 2.0, "theta": 0.0})
    h = 1e-6
    fd = (evaluate(e, {"r": 2 + h, "theta": 0.0}) - evaluate(e, {"r": 2 - h, "theta": 0.0})) / (2 * h)
    assert d == pytest.approx(12.0, rel=1e-15)
    assert fd == pytest.approx(d, rel=1e-8)


def test_domain_errors_surface_at_evaluation():
    d = diff_expr(parse_expr("log(r) + sqrt(r)"), "r")
    with pytest.raises(ExprDomainError):
        evaluate(d, {"r": 0.0})
    with pytest.raises(ExprDomainError):
        evaluate(parse_expr("1/(r - 1)"), {"r": 1.0})


def test_free_variables():
    assert free_variables(parse_expr("r*cos(theta) + 3")) == {"r", "theta"}


def test_random_derivatives_match_finite_differences():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        worst = max(worst, derivative_mismatch(random_expr_text(rng, 6), random_point(rng), VARS[rng.integers(4)]))
    assert worst <= 1e-7


def test_format_parse_round_trip_is_exact():
    rng = np.random.default_rng(11)
    for _ in range(300):
        e = parse_expr(random_expr_text(rng, 6))
        text = format_expr(e)
        again = parse_expr(text)
        assert again == e
        assert format_expr(again) == text
        pt = random_point(rng)
        assert evaluate(again, pt) == evaluate(e, pt)


def test_evaluation_is_deterministic_and_vectorised():
    rng = np.random.default_rng(3)
    for _ in range(50):
        e = parse_expr(random_expr_text(rng, 5))
        pts = [random_point(rng) for _ in range(8)]
        scalar = [evaluate(e, p) for p in pts]
        assert [evaluate(e, p) for p in pts] == scalar
        arrays = {k: np.array([p[k] for p in pts]) for k in VARS}
        assert np.allclose(np.broadcast_to(evaluate(e, arrays), (8,)), scalar, rtol=1e-14, atol=1e-14)


def test_mixed_second_derivatives_commute():
    rng = np.random.default_rng(5)
    for _ in range(100):
        e = parse_expr(random_expr_text(rng, 5))
        a, b = rng.choice(VARS, 2, replace=False)
        pt = random_point(rng)
        dab = evaluate(diff_expr(diff_expr(e, a), b), pt)
        dba = evaluate(diff_expr(diff_expr(e, b), a), pt)
        assert dab == pytest.approx(dba, rel=1e-10, abs=1e-10)


def test_compiled_program_matches_tree_evaluation():
    rng = np.random.default_rng(9)
    trees = [parse_expr(random_expr_text(rng, 6)) for _ in range(20)]
    prog = compile_program(trees)
    for _ in range(10):
        pt = random_point(rng)
        out = prog.run([pt[v] for v in VARS])
        ref = [evaluate(t, pt) for t in trees]
        assert np.allclose(out, ref, rtol=1e-13, atol=1e-13)


@settings(max_examples=60, deadline=None)
@given(st.floats(0.3, 3.0), st.floats(-3.0, 3.0), st.integers(-3, 3))
def test_power_rule(r, theta, n):
    e = parse_expr(f"r^({n})*sin(theta)")
    d = evaluate(diff_expr(e, "r"), {"r": r, "theta": theta})
    assert d == pytest.approx(n * r ** (n - 1) * math.sin(theta), rel=1e-13, abs=1e-15)
