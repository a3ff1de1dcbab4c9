import itertools
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from repxva.closed_form import (
    DepositParams,
    closed_form_breakdown,
    deposit_breakdown,
    deposit_params_from_model,
    deposit_value_curve,
    price_deposit,
    price_deposit_const,
    price_deposit_mp_zero_recovery,
    price_deposit_time_varying,
)
from repxva.curves import PiecewiseConstant
from repxva.instruments import DealSpec

from conftest import deposit_model


def _params(li=0.01, lh=0.03, r=0.4, g=0.005, c=0.02, T=5.0, n=1.0):
    return DepositParams(n, c, li, lh, r, g, T)


def _quad_oracle(c, lam_i, lam_h, r, gam, T, n=1.0):
    """Direct numerical integration of the deposit loss integral."""
    def lam_h_at(s):
        return lam_h(s) if callable(lam_h) else lam_h

    def gam_at(s):
        return gam(s) if callable(gam) else gam

    def cum(s):
        return integrate.quad(lambda u: lam_i + lam_h_at(u) + gam_at(u), 0, s, limit=200,
                              points=[p for p in (1.0, 2.0) if p < s] or None)[0]

    loss = integrate.quad(
        lambda s: ((1 - r) * lam_h_at(s) + gam_at(s)) * math.exp(-cum(s)), 0, T, limit=200,
        points=[1.0, 2.0],
    )[0]
    return n * math.exp(-c * T) * (1 - loss)


def test_constant_formula_against_quadrature():
    v = price_deposit_const(_params())
    assert v == pytest.approx(_quad_oracle(0.02, 0.01, 0.03, 0.4, 0.005, 5.0), rel=1e-12)
    assert v == pytest.approx(0.8116567184568615, rel=1e-13)


def test_time_varying_against_quadrature():
    lam_h = PiecewiseConstant.from_steps([0.0, 2.0], [0.03, 0.06])
    gam = PiecewiseConstant.from_steps([0.0, 1.0], [0.005, 0.002])
    p = DepositParams(1.0, 0.02, 0.01, lam_h, 0.4, gam, 5.0)
    expected = _quad_oracle(0.02, 0.01, lam_h, 0.4, gam, 5.0)
    assert price_deposit_time_varying(p) == pytest.approx(expected, rel=1e-10)
    assert price_deposit(p) == price_deposit_time_varying(p)


def test_reduces_to_constant_on_grid():
    for li, lh, g, r in itertools.product([0.0, 0.01, 0.1], [0.0, 0.03, 0.2], [0.0, 0.005, 0.02], [0.0, 0.4]):
        p = _params(li, lh, r, g)
        const = price_deposit_const(p)
        assert abs(price_deposit_time_varying(p) - const) <= 1e-12 * abs(const)


def test_limits():
    p = _params(li=0.0, lh=0.0, g=0.01)
    assert price_deposit_const(p) == pytest.approx(math.exp(-0.03 * 5.0), rel=4e-16)
    p = _params(li=0.0, r=0.0)
    assert price_deposit_const(p) == pytest.approx(price_deposit_mp_zero_recovery(p), rel=1e-12)
    p = _params(li=1e4, lh=0.01, g=0.002)
    assert abs(price_deposit_const(p) - math.exp(-0.1)) <= 1e-6
    assert price_deposit_const(_params(li=0, lh=0, g=0, T=0.0)) == 1.0


def test_breakdown_sums_and_signs():
    b = deposit_breakdown(_params())
    assert b.v == pytest.approx(b.v_c + b.fva + b.cva + b.dva, abs=1e-15)
    assert b.dva < 0 and b.fva < 0 and b.cva == 0.0
    zero = deposit_breakdown(_params(li=0.0, lh=0.0, g=0.0))
    assert zero.fva == 0.0 and zero.dva == 0.0


def test_model_mapping_and_mirror():
    model = deposit_model(lam_i=0.01, lam_h=0.03, gamma=0.005)
    lend = closed_form_breakdown(DealSpec("deposit", 1.0, 5.0), model)
    assert lend.v == pytest.approx(0.8116567184568615, rel=1e-12)
    params, sign = deposit_params_from_model(DealSpec("deposit", 1.0, 5.0, direction=-1), model)
    assert sign == -1 and params.lambda_hedger == pytest.approx(0.01)
    borrow = closed_form_breakdown(DealSpec("deposit", 1.0, 5.0, direction=-1), model)
    assert borrow.v < 0 and borrow.cva > 0 and borrow.dva == 0.0


def test_value_curve_endpoints():
    p = _params()
    curve = deposit_value_curve(p, [0.0, 5.0])
    assert curve[0] == price_deposit(p)
    assert curve[1] == 1.0


def test_invalid_params():
    with pytest.raises(ValueError):
        _params(r=1.0)
    with pytest.raises(ValueError):
        _params(lh=-0.1)
    with pytest.raises(ValueError):
        _params(T=-1.0)


rates = st.floats(0.0, 0.3)


@settings(max_examples=100, deadline=None)
@given(li=rates, lh=rates, g=st.floats(0.0, 0.05), r=st.floats(0.0, 0.95), g2=st.floats(0.0, 0.05))
def test_value_bounded_and_decreasing_in_basis(li, lh, g, r, g2):
    lo, hi = sorted((g, g2))
    v_lo = price_deposit_const(_params(li, lh, r, lo))
    v_hi = price_deposit_const(_params(li, lh, r, hi))
    assert v_hi <= v_lo + 1e-15
    # the lender never gets more than the riskless amount nor less than zero
    assert 0.0 <= v_lo <= math.exp(-0.1) + 1e-15
