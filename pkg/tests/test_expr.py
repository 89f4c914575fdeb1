import math
import random

import pytest
from hypothesis import given, strategies as st

from exprgen import random_expr
from filippov import expr as ex
from filippov.errors import ExprEvalError, ExprSyntaxError, NonDifferentiableError, UnknownIdentifierError


@pytest.mark.parametrize("src, pt, value", [
    ("1+2*3", (0, 0), 7.0),
    ("-x^2", (3, 0), -9.0),
    ("(y-5/2)*(y-7/2)", (0, 3), -0.25),
    ("2^-1", (0, 0), 0.5),
    ("sin(pi/2)+cos(0)", (0, 0), 2.0),
    ("sqrt3^2", (0, 0), 3.0),
    ("abs(x-y)", (1, 4), 3.0),
    ("1e-3*x", (2, 0), 2e-3),
])
def test_evaluates_known_values(src, pt, value):
    assert ex.parse(src).eval(pt) == pytest.approx(value, rel=1e-15, abs=1e-15)


def test_power_binds_tighter_than_unary_minus():
    assert ex.parse("-2^2").eval((0, 0)) == -4.0


def test_derivatives_by_hand():
    e = ex.parse("x^2*sin(y)")
    dx, dy = ex.gradient(e)
    assert dx.eval((1.5, 0.7)) == pytest.approx(2 * 1.5 * math.sin(0.7), rel=1e-15)
    assert dy.eval((1.5, 0.7)) == pytest.approx(1.5 ** 2 * math.cos(0.7), rel=1e-15)
    assert ex.differentiate(ex.parse("sqrt(x)"), "x").eval((4, 0)) == pytest.approx(0.25)


def test_abs_is_rejected_by_differentiation():
    with pytest.raises(NonDifferentiableError):
        ex.differentiate(ex.parse("abs(x)"), "x")


@pytest.mark.parametrize("src, offset", [("1 +", 3), ("(x", 2), ("x $ y", 2), ("x^1.5", 2), ("x^2^3", 3)])
def test_syntax_errors_report_offset(src, offset):
    with pytest.raises(ExprSyntaxError) as info:
        ex.parse(src)
    assert info.value.offset == offset


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError):
        ex.parse("tan(x)")


def test_eval_errors_are_wrapped():
    with pytest.raises(ExprEvalError):
        ex.parse("1/x").eval((0, 0))
    with pytest.raises(ExprEvalError):
        ex.parse("sqrt(x)").eval((-1, 0))


def test_pretty_round_trip():
    rng = random.Random(7)
    for _ in range(200):
        e = ex.parse(random_expr(rng))
        again = ex.parse(e.pretty())
        for pt in ((0.3, -0.8), (1.7, 0.2)):
            assert again.eval(pt) == pytest.approx(e.eval(pt), rel=1e-12, abs=1e-12)


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_derivative_matches_difference_quotient(x, y):
    e = ex.parse("sin(x*y)+x^3/(2+cos(y))")
    h = 1e-6
    num = (e.eval((x + h, y)) - e.eval((x - h, y))) / (2 * h)
    assert ex.differentiate(e, "x").eval((x, y)) == pytest.approx(num, rel=1e-6, abs=1e-6)


@given(st.lists(st.sampled_from(["x", "y", "1", "2.5", "+", "-", "*", "/", "^", "(", ")", "sin", "pi", " ", "$"]),
                max_size=20))
def test_parser_only_raises_syntax_errors(tokens):
    try:
        ex.parse("".join(tokens))
    except ExprSyntaxError:
        pass
