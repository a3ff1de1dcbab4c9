import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repxva.curves import CoverageError, PiecewiseConstant, as_curve, merged_knots


def test_constant_curve_value_and_integral():
    c = PiecewiseConstant.constant(0.03)
    assert c(2.5) == 0.03
    assert c.integral(1.0, 3.0) == pytest.approx(0.06, abs=1e-15)
    assert c.is_constant


def test_step_curve_is_right_continuous():
    c = PiecewiseConstant.from_steps([0.0, 1.0], [0.01, 0.05], end=4.0)
    assert c(0.999) == 0.01
    assert c(1.0) == 0.05
    np.testing.assert_allclose(c(np.array([0.5, 2.0])), [0.01, 0.05])
    assert c.integral(0.0, 4.0) == pytest.approx(0.01 + 0.15)


def test_coverage_is_enforced():
    c = PiecewiseConstant.from_steps([0.0], [0.01], end=2.0)
    with pytest.raises(CoverageError):
        c(2.5)
    with pytest.raises(CoverageError):
        PiecewiseConstant((0.5, 1.0), (0.1,))


@pytest.mark.parametrize(
    "knots, values",
    [((0.0, 0.0), (1.0,)), ((0.0, 1.0), (1.0, 2.0)), ((0.0, 1.0), (math.nan,))],
)
def test_invalid_curves_rejected(knots, values):
    with pytest.raises(ValueError):
        PiecewiseConstant(knots, values)


def test_merged_knots_and_as_curve():
    a = PiecewiseConstant.from_steps([0.0, 1.0], [1.0, 2.0])
    b = PiecewiseConstant.from_steps([0.0, 2.5], [1.0, 2.0])
    np.testing.assert_array_equal(merged_knots([a, b], 0.0, 3.0), [0.0, 1.0, 2.5, 3.0])
    assert as_curve(0.2)(10.0) == 0.2
    assert as_curve(a) is a


steps = st.lists(st.floats(-0.1, 0.1, allow_nan=False), min_size=1, max_size=5)


@settings(max_examples=60, deadline=None)
@given(values=steps, a=st.floats(0, 6), b=st.floats(0, 6), m=st.floats(0, 6))
def test_integral_is_additive(values, a, b, m):
    knots = tuple(float(i) for i in range(len(values))) + (math.inf,)
    c = PiecewiseConstant(knots, tuple(values))
    assert c.integral(a, b) == pytest.approx(c.integral(a, m) + c.integral(m, b), abs=1e-12)
    assert c.integral(a, a) == 0.0
