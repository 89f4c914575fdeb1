import math

import pytest
from hypothesis import given, settings, strategies as st

from filippov.errors import DeterministicBranchError
from filippov.flow import (
    ArcKind,
    Box,
    EndEvent,
    FlowOptions,
    Integrator,
    closes,
    first_contact,
    flow_point,
    flow_set,
    integrate_free,
)


def test_free_arc_matches_closed_form(catalog):
    # F+ = (1, -x): x = t, y = 1/2 - t^2/2 reaches y = 0 at t = 1
    arc = integrate_free(catalog("foldfold_center"), 0, (0.0, 0.5), 5.0)
    t, p = arc.end
    assert t == pytest.approx(1.0, abs=1e-9)
    assert p == pytest.approx((1.0, 0.0), abs=1e-9)
    for s, q in zip(arc.ts, arc.pts):
        assert q[1] == pytest.approx(0.5 - s * s / 2, abs=1e-9)


@given(st.floats(0.05, 0.9), st.floats(0.01, 1.5))
@settings(max_examples=40)
def test_z1_reaches_surface_and_slides(y0, T):
    tree = flow_point(_z1(), (0.0, y0), T)
    p = tree.nodes[-1].end_point
    # down the diagonal until y = 0, then slide with unit speed
    expect = (T, y0 - T) if T < y0 else (T, 0.0)
    assert p == pytest.approx(expect, abs=1e-8)


def _z1():
    from filippov import scenarios
    return scenarios.get("z1")


def test_backward_from_sliding_point_has_three_branches(catalog):
    tree = flow_point(catalog("z1"), (0.3, 0.0), -1.0, "all")
    assert sorted(n.label for n in tree.nodes[1:]) == ["depart+", "depart-", "slide"]
    ends = sorted(tree.endpoints(), key=lambda p: p[1])
    # departures start 1e-9 off the surface
    for p, q in zip(ends, [(-0.7, -1.0), (-0.7, 0.0), (-0.7, 1.0)]):
        assert p == pytest.approx(q, abs=1e-8)


def test_deterministic_policy_refuses_branching(catalog):
    with pytest.raises(DeterministicBranchError):
        flow_point(catalog("z1"), (0.3, 0.0), -1.0, "deterministic")


def test_branch_cap_marks_truncation(catalog):
    tree = flow_point(catalog("z1"), (0.3, 0.0), -1.0, "all", cap=2)
    assert tree.truncated


def test_sliding_onto_zero_field_rests(catalog):
    tree = flow_point(catalog("ex42"), (0.5, 0.3), 1.0, "all")
    assert tree.nodes[-1].end_point == pytest.approx((0.5, 0.0), abs=1e-9)
    kinds = [a.kind for a in tree.arcs()]
    assert kinds[0] is ArcKind.FREE and kinds[-1] is not ArcKind.FREE


def test_foldfold_orbit_closes(catalog):
    d, tree = closes(catalog("foldfold_center"), (0.0, 0.25), 2 * math.sqrt(2))
    assert d < 1e-7
    assert [a.index for a in tree.arcs()] == [0, 1, 0]


def test_torus_orbit_wraps(catalog):
    tree = flow_point(catalog("ex43"), (0.5, 1.0), math.pi)
    assert tree.nodes[-1].end_point == pytest.approx((0.5, 1.0), abs=1e-9)


def test_klein_seam_flips_height(catalog):
    # (0.5, 1) until x = 1 at t = 0.2, reappears at height -0.75 = 0.25, then (1, 2) for 0.1
    tree = flow_point(catalog("striped_klein"), (0.9, 0.55), 0.3)
    assert tree.nodes[-1].end_point == pytest.approx((0.1, 0.45), abs=1e-8)


def test_backward_time_reverses_free_flow(catalog):
    s = catalog("foldfold_center")
    fwd = flow_point(s, (-0.3, 0.2), 0.4).nodes[-1].end_point
    back = flow_point(s, fwd, -0.4).nodes[-1].end_point
    assert back == pytest.approx((-0.3, 0.2), abs=1e-9)


def test_first_contact(catalog):
    c = first_contact(catalog("z1"), (0.0, 0.5), 2.0)
    assert c.hit and c.t == pytest.approx(0.5) and c.point == pytest.approx((0.5, 0.0))
    assert not first_contact(catalog("foldfold_center"), (0.0, 0.25), 5.0).hit


def test_options_at_escaping_point(catalog):
    opts, a, b = Integrator(catalog("ex43"), 1).options(0, (1.5, 0.0))
    assert a > 0 > b
    assert sorted(o.name for o in opts) == ["depart+", "depart-", "slide"]


def test_flow_set_identity_and_translation(catalog):
    s = catalog("z1")
    for t in (0.0, 0.1):
        cover = flow_set(s, [Box(0.0, 0.2, 0.3, 0.5)], t, 8)
        assert cover.area == pytest.approx(0.04, rel=1e-12)


def test_flow_options_validation():
    with pytest.raises(ValueError):
        FlowOptions(rtol=0.0).validate()
    with pytest.raises(ValueError):
        FlowOptions(atol=1e-15).validate()


def test_time_limit_event(catalog):
    tree = flow_point(catalog("ex43"), (0.5, 1.0), 0.5)
    assert tree.nodes[-1].end_event is EndEvent.TIME_LIMIT


def test_sliding_through_double_tangency(catalog):
    # backward sliding on ex43's y = 0 passes the two-fold point where F+h = F-h = 0
    tree = flow_point(catalog("ex43"), (0.3, 0.0), -2.0, "all")
    ends = sorted(tree.endpoints(), key=lambda p: p[1])
    assert ends[1] == pytest.approx((0.3 - 2.0 + math.pi, 0.0), abs=1e-8)
    assert ends[0][1] == pytest.approx(-ends[2][1], abs=1e-8)
