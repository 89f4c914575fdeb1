import math

import pytest
from hypothesis import given, settings, strategies as st

from filippov.geometry import Chart, Mode, QuotientDomain

TORUS = QuotientDomain(0.0, -1.5, math.pi, 4.5, Mode.TORUS)
KLEIN = QuotientDomain(0.0, -0.5, 1.0, 1.0, Mode.KLEIN)
PLANE = QuotientDomain(-1.0, -1.0, 2.0, 2.0, Mode.PLANE)

coords = st.floats(-50, 50, allow_nan=False)


@settings(max_examples=10_000)
@given(st.sampled_from([TORUS, KLEIN]), coords, coords)
def test_canonicalize_idempotent_and_inside(d, x, y):
    c = d.canonicalize((x, y))
    assert d.x0 <= c[0] < d.x0 + d.p and d.y0 <= c[1] < d.y0 + d.q
    assert d.canonicalize(c) == c


def test_torus_identification():
    assert TORUS.canonicalize((math.pi + 0.5, 3.5)) == pytest.approx((0.5, -1.0))


def test_klein_flips_height_across_vertical_seam():
    assert KLEIN.canonicalize((1.25, 0.2)) == pytest.approx((0.25, -0.2))
    assert KLEIN.canonicalize((2.25, 0.2)) == pytest.approx((0.25, 0.2))


def test_plane_is_untouched():
    assert PLANE.canonicalize((5.0, -7.0)) == (5.0, -7.0)


def test_distance_uses_identifications():
    assert TORUS.distance((0.05, 0.0), (math.pi - 0.05, 0.0)) == pytest.approx(0.1)
    assert KLEIN.distance((0.95, 0.3), (0.05, -0.3)) == pytest.approx(0.1)


@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3), coords, coords)
def test_chart_composition(k1, l1, k2, l2, x, y):
    a, b = Chart(k1, l1, True), Chart(k2, l2, True)
    p = (x, y)
    lhs = a.then(b).apply(KLEIN, p)
    rhs = b.apply(KLEIN, a.apply(KLEIN, p))
    assert lhs == pytest.approx(rhs, abs=1e-9)
    assert a.inverse().apply(KLEIN, a.apply(KLEIN, p)) == pytest.approx(p, abs=1e-9)
