import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from repxva.hedge import HedgeError, funding_residual, hedge_weights, replication_pnl
from repxva.instruments import DealSpec

from conftest import deposit_model

finite = st.floats(-1e3, 1e3, allow_nan=False)


@settings(max_examples=80, deadline=None)
@given(v=finite, ji=finite, jh=finite, ri=st.floats(0, 0.9), rh=st.floats(0, 0.9),
       vs=finite, hs=st.floats(0.1, 10))
def test_weights_cancel_each_exposure(v, ji, jh, ri, rh, vs, hs):
    w = hedge_weights(v=v, dv_ds=vs, dh_ds=hs, h=2.0, jump_i=ji, jump_h=jh,
                      recoveries=(ri, rh), bond_short=0.99)
    # a short-term CDS on the investor pays 1 - R_I on default
    assert w.epsilon * (1 - ri) + ji == pytest.approx(0.0, abs=1e-9)
    # short-term own bonds worth V lose (1 - R_H) on default; eta CDS cover the rest
    assert (-(1 - rh) * v) - (w.eta * (1 - rh)) == pytest.approx(jh, abs=1e-9)
    assert w.alpha * hs == pytest.approx(vs, abs=1e-9)
    assert float(w.beta) == pytest.approx(-2.0 * float(w.alpha))
    assert abs(float(funding_residual(w, v, 0.99))) < 1e-9
    assert w.xi == 0.0 and w.omega_small == 0.0


def test_zero_sensitivity_is_rejected():
    kw = dict(v=1.0, h=0.0, jump_i=0.0, jump_h=0.0, recoveries=(0.4, 0.4), bond_short=1.0)
    with pytest.raises(HedgeError) as err:
        hedge_weights(dv_ds=0.5, dh_ds=0.0, **kw)
    assert err.value.instrument == "collateralized derivative"
    assert float(hedge_weights(dv_ds=0.0, dh_ds=0.0, **kw).alpha) == 0.0
    with pytest.raises(HedgeError):
        hedge_weights(dv_ds=0.0, dh_ds=1.0, dv_dpi_i=1.0, dcds_dpi_i=0.0, **kw)


@pytest.fixture(scope="module")
def call_runs():
    model = deposit_model(lam_i=0.01, lam_h=0.03, gamma=0.005, spot_drift=0.06)
    deal = DealSpec("european_call", 1.0, 1.0, strike=100.0)
    return [replication_pnl(deal, model, dt, 4000, seed=3) for dt in (1 / 50, 1 / 100)]


def test_call_replication(call_runs):
    coarse, fine = call_runs
    for rep in call_runs:
        assert rep.n_jump_events > 0
        assert rep.max_jump_residual <= 1e-10
        assert rep.funding_residual_max <= 1e-12
        assert rep.loadings_pass(3.0)
        assert len(rep.terminal_errors) == 4000
    ratio = coarse.std_error / fine.std_error
    assert np.sqrt(2) / 1.5 <= ratio <= np.sqrt(2) * 1.5


def test_deposit_replication_is_tight():
    model = deposit_model()
    rep = replication_pnl(DealSpec("deposit", 1.0, 2.0), model, 1 / 50, 2000, seed=1)
    assert rep.max_jump_residual <= 1e-10
    assert rep.std_error < 1e-5
    summary = rep.summary()
    assert summary["n_paths"] == 2000 and "loading_spot" in summary


def test_stochastic_spreads_rejected():
    model = deposit_model(hedger_spread_vol=0.01)
    with pytest.raises(ValueError):
        replication_pnl(DealSpec("deposit", 1.0, 1.0), model, 0.1, 10, seed=0)
