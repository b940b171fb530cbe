from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughwave import region as R
from roughwave.exceptions import DescriptorError, EmptyRegion


def test_strip_indicator_and_wrap():
    s = R.strip(2, 0, 0.3, 0.5)
    x = np.array([[0.4, 0.9], [0.3, 0.1], [0.6, 0.4]])
    assert s.contains(x).tolist() == [True, False, False]
    w = R.arc(0.9, 0.1)  # wraps through 0
    assert w.contains(np.array([[0.95], [0.05], [0.5]])).tolist() == [True, True, False]
    assert w.measure_estimate() == pytest.approx(0.2, abs=1e-2)


def test_cross_region_measure():
    c = R.cross(0.1)
    assert c.measure_estimate(512) == pytest.approx(0.1 + 0.1 - 0.01, abs=2e-3)


def test_whole_region():
    assert R.whole(2).measure_estimate() == 1.0


@given(st.floats(0, 1))
def test_smooth_profile_support_equals_region(x):
    ind, sm = R.arc(0.2, 0.6), R.arc(0.2, 0.6, "smooth")
    assert bool(ind.contains([[x]])[0]) == bool(sm.weight([[x]])[0] > 0)
    assert 0 <= sm.weight([[x]])[0] <= 1


def test_ball_and_expr_regions():
    b = R.ControlRegion(2, balls=(((0.5, 0.5), 0.1),))
    assert b.contains(np.array([[0.55, 0.5], [0.7, 0.5]])).tolist() == [True, False]
    e = R.ControlRegion(2, expr="sin(2*pi*x1)")
    assert e.contains(np.array([[0.75, 0.0], [0.25, 0.0]])).tolist() == [True, False]


def test_invalid_regions():
    with pytest.raises(EmptyRegion):
        R.arc(0.3, 0.3)
    with pytest.raises(DescriptorError):
        R.ControlRegion(1, boxes=((0.1, 0.2),), profile="fuzzy")
    with pytest.raises(DescriptorError):
        R.ControlRegion.from_dict({"dim": 1, "boxes": [[[0.1, 0.2]]], "shape": 1})


def test_distance_zero_inside_positive_outside():
    s = R.strip(2, 0, 0.3, 0.5)
    d = s.distance(np.array([[0.4, 0.2], [0.7, 0.2]]))
    assert d[0] == 0 and d[1] == pytest.approx(0.2)


def test_json_round_trip(tmp_path):
    c = R.cross(0.1)
    c.to_json(tmp_path / "r.json")
    assert R.ControlRegion.from_json(tmp_path / "r.json") == c
