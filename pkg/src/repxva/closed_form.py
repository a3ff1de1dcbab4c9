"""Closed-form prices of an uncollateralized single cash-flow deposit.

The investor lends ``N`` to the hedger, who repays ``N`` at maturity.  With
hazard rates ``lam_i`` (lender) and ``lam_h`` (borrower), borrower recovery
``R_H`` and borrower bond-CDS basis ``gamma``, the lender's value is::

    N D(t,T) [1 - int_t^T ((1-R_H) lam_h(s) + gamma(s))
                   exp(-int_t^s (lam_i + lam_h + gamma)) ds]

which for constant parameters reduces to::

    N e^{-c tau} [1 - ((1-R_H) lam_h + gamma) / k * (1 - e^{-k tau})],
    k = lam_i + lam_h + gamma.

Hazard rates are risk-neutral intensities ``spread / (1 - recovery)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .curves import PiecewiseConstant, as_curve, merged_knots
from .instruments import DealKind, DealSpec
from .market_model import MarketModel

# below this |rate| the exponential ratio is replaced by its series
SERIES_THRESHOLD = 1e-10


@dataclass(frozen=True)
class DepositParams:
    notional: float
    ois: float | PiecewiseConstant
    lambda_investor: float | PiecewiseConstant
    lambda_hedger: float | PiecewiseConstant
    recovery_hedger: float
    basis: float | PiecewiseConstant
    horizon: float

    def __post_init__(self):
        if not 0.0 <= self.recovery_hedger < 1.0:
            raise ValueError(f"recovery_hedger must lie in [0, 1), got {self.recovery_hedger}")
        if self.horizon < 0.0:
            raise ValueError(f"horizon must be >= 0, got {self.horizon}")
        for name in ("lambda_investor", "lambda_hedger"):
            if min(as_curve(getattr(self, name)).values) < 0.0:
                raise ValueError(f"{name} must be >= 0")

    @property
    def is_constant(self) -> bool:
        return all(
            not isinstance(x, PiecewiseConstant) or x.is_constant
            for x in (self.ois, self.lambda_investor, self.lambda_hedger, self.basis)
        )

    def constant_value(self, name: str) -> float:
        x = getattr(self, name)
        if isinstance(x, PiecewiseConstant):
            if not x.is_constant:
                raise ValueError(f"{name} is not constant")
            return x.values[0]
        return float(x)


def _exp_ratio(rate: float, h: float) -> float:
    """``(1 - exp(-rate*h)) / rate`` with its ``rate -> 0`` limit."""
    if abs(rate) < SERIES_THRESHOLD:
        return h * (1.0 - 0.5 * rate * h)
    return -math.expm1(-rate * h) / rate


def price_deposit_const(p: DepositParams) -> float:
    c = p.constant_value("ois")
    li = p.constant_value("lambda_investor")
    lh = p.constant_value("lambda_hedger")
    g = p.constant_value("basis")
    tau = p.horizon
    k = li + lh + g
    loss_rate = (1.0 - p.recovery_hedger) * lh + g
    return p.notional * math.exp(-c * tau) * (1.0 - loss_rate * _exp_ratio(k, tau))


def price_deposit_mp_zero_recovery(p: DepositParams) -> float:
    """Benchmark zero-recovery deposit value ``N e^{-(c + lam_h + gamma) tau}``.

    Ignores the lender's default; provided for comparison only.
    """
    c = p.constant_value("ois")
    lh = p.constant_value("lambda_hedger")
    g = p.constant_value("basis")
    return p.notional * math.exp(-(c + lh + g) * p.horizon)


def _segments(p: DepositParams):
    lam_i, lam_h, gam = (as_curve(x) for x in (p.lambda_investor, p.lambda_hedger, p.basis))
    knots = merged_knots((lam_i, lam_h, gam), 0.0, p.horizon)
    for a, b in zip(knots[:-1], knots[1:]):
        yield b - a, lam_i(a), lam_h(a), gam(a)


def price_deposit_time_varying(p: DepositParams) -> float:
    """Deposit value for piecewise-constant hazards, basis and OIS rate.

    Both integrals are evaluated exactly segment by segment over the union
    of the curves' breakpoints.
    """
    ois = as_curve(p.ois)
    disc = math.exp(-ois.integral(0.0, p.horizon))
    acc = 0.0  # int_0^a (lam_i + lam_h + gamma)
    loss = 0.0
    for h, li, lh, g in _segments(p):
        k = li + lh + g
        loss += ((1.0 - p.recovery_hedger) * lh + g) * math.exp(-acc) * _exp_ratio(k, h)
        acc += k * h
    return p.notional * disc * (1.0 - loss)


def price_deposit(p: DepositParams) -> float:
    return price_deposit_const(p) if p.is_constant else price_deposit_time_varying(p)


@dataclass(frozen=True)
class DepositBreakdown:
    v: float
    v_c: float
    fva: float
    cva: float
    dva: float


def deposit_breakdown(p: DepositParams) -> DepositBreakdown:
    """Split the lender's deposit value into collateralized value, FVA and DVA.

    The borrower-default term is the only credit term (the lender's
    collateralized exposure is never negative, so CVA is zero); FVA is the
    remainder.
    """
    ois = as_curve(p.ois)
    disc = math.exp(-ois.integral(0.0, p.horizon))
    v_c = p.notional * disc
    acc = 0.0
    default_leg = 0.0
    for h, li, lh, _ in _segments(p):
        default_leg += lh * math.exp(-acc) * _exp_ratio(li + lh, h)
        acc += (li + lh) * h
    dva = 0.0 - (1.0 - p.recovery_hedger) * v_c * default_leg
    v = price_deposit(p)
    return DepositBreakdown(v=v, v_c=v_c, fva=v - v_c - dva, cva=0.0, dva=dva)


def deposit_value_curve(p: DepositParams, times) -> np.ndarray:
    """Pre-default deposit value ``V(s)`` at each time ``s`` in ``[0, horizon]``."""
    out = []
    for s in np.atleast_1d(np.asarray(times, dtype=float)):
        shifted = DepositParams(
            notional=p.notional,
            ois=_shift(p.ois, s),
            lambda_investor=_shift(p.lambda_investor, s),
            lambda_hedger=_shift(p.lambda_hedger, s),
            recovery_hedger=p.recovery_hedger,
            basis=_shift(p.basis, s),
            horizon=p.horizon - s,
        )
        out.append(price_deposit(shifted))
    return np.array(out)


def _shift(x, s: float):
    """Re-base a curve so that time ``s`` becomes time 0."""
    if not isinstance(x, PiecewiseConstant) or s == 0.0:
        return x
    knots = [k - s for k in x.knots]
    vals = list(x.values)
    # drop segments that end at or before the new origin
    while len(knots) > 2 and knots[1] <= 0.0:
        knots.pop(0)
        vals.pop(0)
    return PiecewiseConstant(tuple(knots), tuple(vals))


def deposit_params_from_model(deal: DealSpec, model: MarketModel) -> tuple[DepositParams, int]:
    """Map a deposit on a constant-spread model to :class:`DepositParams`.

    Returns the parameters of the lender's value and the sign (+1 when the
    investor lends) converting it to the investor's view.  The lender's
    hazard goes in ``lambda_investor``, the borrower's hazard and recovery in
    ``lambda_hedger``/``recovery_hedger``; the basis is always the hedger's.
    """
    if deal.kind is not DealKind.DEPOSIT:
        raise ValueError("closed form is available for deposits only")
    for label, party in (("hedger", model.hedger), ("investor", model.investor)):
        if not party.deterministic or any(v != 0.0 for v in party.q_drift().values):
            raise ValueError(f"closed form needs a constant {label} spread")
    lam_h = model.hedger.spread0 / model.hedger.lgd
    lam_i = model.investor.spread0 / model.investor.lgd
    sign = 1 if deal.direction * deal.notional > 0 else -1
    if sign > 0:
        lender_lam, borrower_lam, borrower_rec = lam_i, lam_h, model.hedger.recovery
    else:
        lender_lam, borrower_lam, borrower_rec = lam_h, lam_i, model.investor.recovery
    params = DepositParams(
        notional=abs(deal.notional),
        ois=model.curves.ois,
        lambda_investor=lender_lam,
        lambda_hedger=borrower_lam,
        recovery_hedger=borrower_rec,
        basis=model.hedger.basis,
        horizon=deal.maturity,
    )
    return params, sign


def closed_form_breakdown(deal: DealSpec, model: MarketModel) -> DepositBreakdown:
    """Investor-view breakdown of a deposit priced in closed form.

    When the hedger is the lender the borrower-default term is a CVA.
    """
    params, sign = deposit_params_from_model(deal, model)
    b = deposit_breakdown(params)
    if sign > 0:
        return b
    return DepositBreakdown(v=-b.v, v_c=-b.v_c, fva=-b.fva, cva=-b.dva, dva=0.0)
