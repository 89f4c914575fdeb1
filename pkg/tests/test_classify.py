import math

import numpy as np
import pytest

from filippov.classify import (
    Label,
    classify_point,
    filippov_segment,
    filippov_set_point,
    label_of,
    scan_surface,
    side_data,
    sliding_field,
    sliding_weight,
)
from filippov.errors import OffSurfaceError, WrongRegionError

# roots of sin(x)^2 = 3/5 in [0, pi]
C1 = math.asin(math.sqrt(3 / 5))
C2 = math.pi - C1


@pytest.mark.parametrize("a, b, lab", [
    (1.0, 2.0, Label.CROSSING), (-1.0, -0.5, Label.CROSSING), (-1.0, 1.0, Label.SLIDING),
    (1.0, -1.0, Label.ESCAPING), (0.0, 1.0, Label.TANGENCY), (1.0, 5e-11, Label.TANGENCY),
])
def test_label_rule(a, b, lab):
    assert label_of(a, b) is lab


def test_z1_slides_with_unit_speed(catalog):
    s = catalog("z1")
    for x in np.linspace(-0.95, 0.95, 32):
        v = sliding_field(s, 0, (float(x), 0.0))
        assert abs(v[0] - 1.0) <= 1e-12 and abs(v[1]) <= 1e-12


def test_z2_as_printed_sliding_field_vanishes(catalog):
    s = catalog("z2_as_printed")
    for x in np.linspace(-0.95, 0.95, 32):
        v = sliding_field(s, 0, (float(x), 0.0))
        assert abs(v[0]) <= 1e-12 and abs(v[1]) <= 1e-12


def test_sliding_vector_is_tangent_and_convex(catalog):
    s = catalog("ex43")
    for x in (0.2, 0.5, 2.8):
        sd = side_data(s, 0, (x, 0.0))
        lam = sliding_weight(sd)
        assert 0.0 < lam < 1.0
        v = sliding_field(s, 0, (x, 0.0))
        assert abs(v[0] * sd.normal[0] + v[1] * sd.normal[1]) < 1e-12


def test_sliding_field_rejects_crossing_points(catalog):
    with pytest.raises(WrongRegionError):
        sliding_field(catalog("ex43"), 1, (0.3, 1.5))


def test_off_surface(catalog):
    with pytest.raises(OffSurfaceError):
        classify_point(catalog("z1"), 0, (0.0, 0.1))


def test_ex43_scan(catalog):
    s = catalog("ex43")
    for j in (0, 1):
        scan = scan_surface(s, j, 256)
        xs = sorted(t.point[0] for t in scan.tangencies)
        assert len(xs) == 2
        assert xs[0] == pytest.approx(C1, abs=1e-6) and xs[1] == pytest.approx(C2, abs=1e-6)
        labels = {lab for _, _, lab in scan.intervals}
        assert labels == ({Label.SLIDING, Label.ESCAPING} if j == 0 else {Label.CROSSING})


def test_foldfold_origin_is_invisible_two_fold(catalog):
    sc = classify_point(catalog("foldfold_center"), 0, (0.0, 0.0))
    assert sc.label is Label.TANGENCY
    d = sc.tangency_detail
    assert (d.side, d.order, d.visible) == ("both", 2, False)


def test_filippov_segment_endpoints(catalog):
    seg = filippov_segment(catalog("z1"), 0, (0.3, 0.0))
    assert filippov_set_point(seg, 1.0) == pytest.approx(seg[0])
    assert filippov_set_point(seg, -1.0) == pytest.approx(seg[1])
