import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from repxva.instruments import (
    CloseOutValues,
    DealKind,
    DealSpec,
    close_out_target,
    collateralized_value,
    jump_values,
)
from repxva.market_model import RateCurves, Role

CURVES = RateCurves(0.02, 0.03, 0.01)


def test_riskless_deposit_value():
    deal = DealSpec("deposit", 100.0, 1.0)
    v = collateralized_value(deal, RateCurves(0.02, 0.02, 0.0), None, 0.0, 0.0).v_c
    assert float(v) == pytest.approx(98.01986733067553, rel=1e-15)


def test_call_matches_gaussian_quadrature():
    deal = DealSpec("european_call", 1.0, 1.0, strike=100.0)
    sig, T, s0 = 0.2, 1.0, 100.0
    fwd = s0 * math.exp(0.02 * T)

    def integrand(z):
        st_ = fwd * math.exp(-0.5 * sig**2 * T + sig * math.sqrt(T) * z)
        return max(st_ - 100.0, 0.0) * stats.norm.pdf(z)

    expected = math.exp(-0.02 * T) * integrate.quad(integrand, -10, 10, points=[0.0])[0]
    got = float(collateralized_value(deal, CURVES, s0, sig, 0.0).v_c)
    assert got == pytest.approx(expected, rel=1e-8)
    zero_rates = RateCurves(0.0, 0.0, 0.0)
    assert float(collateralized_value(deal, zero_rates, s0, sig, 0.0).v_c) == pytest.approx(7.9656, abs=1e-4)


def test_forward_and_parity():
    fwd = DealSpec("forward", 1.0, 2.0, strike=95.0)
    call = DealSpec("european_call", 1.0, 2.0, strike=95.0)
    put_like = DealSpec("european_call", -1.0, 2.0, strike=95.0)
    s = np.array([80.0, 100.0, 120.0])
    vf = collateralized_value(fwd, CURVES, s, 0.25, 0.5).v_c
    vc = collateralized_value(call, CURVES, s, 0.25, 0.5).v_c
    # call - forward = put > 0, and -call is the negated call
    assert np.all(vc - vf > 0)
    np.testing.assert_allclose(collateralized_value(put_like, CURVES, s, 0.25, 0.5).v_c, -vc)
    expected = math.exp(-0.02 * 1.5) * (s * math.exp(0.02 * 1.5) - 95.0)
    np.testing.assert_allclose(vf, expected, rtol=1e-14)


def test_zero_vol_call_is_intrinsic_forward():
    deal = DealSpec("european_call", 1.0, 1.0, strike=100.0)
    v = collateralized_value(deal, CURVES, np.array([90.0, 110.0]), 0.0, 0.0).v_c
    np.testing.assert_allclose(v, [0.0, 110.0 - 100 * math.exp(-0.02)], rtol=1e-14)


def test_value_at_maturity_is_payoff():
    deal = DealSpec("european_call", 2.0, 1.0, strike=100.0, direction=-1)
    s = np.array([50.0, 100.0, 150.0])
    np.testing.assert_allclose(collateralized_value(deal, CURVES, s, 0.3, 1.0).v_c, deal.payoff(s))


def test_deal_validation():
    with pytest.raises(ValueError):
        DealSpec("deposit", 1.0, 0.0)
    with pytest.raises(ValueError):
        DealSpec("european_call", 1.0, 1.0)
    with pytest.raises(ValueError):
        DealSpec("deposit", 1.0, 1.0, strike=1.0)
    with pytest.raises(ValueError):
        DealSpec("forward", 1.0, 1.0, strike=1.0, direction=0)
    with pytest.raises(ValueError):
        collateralized_value(DealSpec("deposit", 1.0, 1.0), CURVES, None, 0.0, 2.0)
    assert DealSpec("deposit", 1.0, 1.0).flipped().direction == -1
    assert DealSpec("forward", 1.0, 1.0, 1.0).kind is DealKind.FORWARD


def test_close_out_rules():
    co = CloseOutValues.from_value(np.array([-10.0, 0.0, 10.0]))
    rec = (0.3, 0.4)
    np.testing.assert_allclose(close_out_target(co, Role.INVESTOR, rec), [-3.0, 0.0, 10.0])
    np.testing.assert_allclose(close_out_target(co, Role.HEDGER, rec), [-10.0, 0.0, 4.0])
    np.testing.assert_allclose(jump_values([-9.0, 1.0, 9.0], co, "hedger", rec), [-1.0, -1.0, -5.0])


@settings(max_examples=80, deadline=None)
@given(
    v=st.floats(-1e6, 1e6, allow_nan=False),
    r_i=st.floats(0, 0.99),
    r_h=st.floats(0, 0.99),
)
def test_close_out_odd_symmetry(v, r_i, r_h):
    # swapping roles and recoveries maps the close-out of V to minus that of -V
    a = close_out_target(CloseOutValues.from_value(v), Role.INVESTOR, (r_i, r_h))
    b = close_out_target(CloseOutValues.from_value(-v), Role.HEDGER, (r_h, r_i))
    if v != 0.0:
        assert float(a) == pytest.approx(-float(b), rel=1e-15, abs=1e-300)
    parts = CloseOutValues.from_value(v)
    assert float(parts.v_c_pos - parts.v_c_neg) == v
    assert parts.v_c_pos >= 0 and parts.v_c_neg >= 0
