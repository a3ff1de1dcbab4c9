"""Deal payoffs, perfectly collateralized values and close-out jumps.

All values are signed as seen by the investor.  ``direction=+1`` means the
investor receives the payoff (for a deposit: the investor is the lender).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .curves import PiecewiseConstant, as_curve
from .market_model import RateCurves, Role


class DealKind(str, enum.Enum):
    DEPOSIT = "deposit"
    FORWARD = "forward"
    EUROPEAN_CALL = "european_call"


@dataclass(frozen=True)
class DealSpec:
    kind: DealKind
    notional: float
    maturity: float
    strike: float | None = None
    direction: int = 1

    def __post_init__(self):
        object.__setattr__(self, "kind", DealKind(self.kind))
        if not self.maturity > 0.0:
            raise ValueError(f"maturity must be > 0, got {self.maturity}")
        if self.notional == 0.0:
            raise ValueError("notional must be non-zero")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if self.kind is DealKind.DEPOSIT:
            if self.strike is not None:
                raise ValueError("a deposit takes no strike")
        elif self.strike is None or not self.strike > 0.0:
            raise ValueError(f"{self.kind.value} needs a strike > 0")

    @property
    def depends_on_underlying(self) -> bool:
        return self.kind is not DealKind.DEPOSIT

    def flipped(self) -> "DealSpec":
        return DealSpec(self.kind, self.notional, self.maturity, self.strike, -self.direction)

    def payoff(self, spot=None):
        scale = self.direction * self.notional
        if self.kind is DealKind.DEPOSIT:
            return scale * np.ones_like(np.asarray(spot if spot is not None else 1.0, dtype=float))
        spot = np.asarray(spot, dtype=float)
        if self.kind is DealKind.FORWARD:
            return scale * (spot - self.strike)
        return scale * np.maximum(spot - self.strike, 0.0)


@dataclass(frozen=True)
class CloseOutValues:
    """Collateralized value and its positive/negative parts (both >= 0)."""

    v_c: np.ndarray
    v_c_pos: np.ndarray
    v_c_neg: np.ndarray

    @classmethod
    def from_value(cls, v_c) -> "CloseOutValues":
        v_c = np.asarray(v_c, dtype=float)
        return cls(v_c, np.maximum(v_c, 0.0), np.maximum(-v_c, 0.0))


def collateralized_value(
    deal: DealSpec,
    curves: RateCurves,
    spot,
    vol,
    t,
) -> CloseOutValues:
    """Perfectly collateralized value ``V^C(t, S)``, discounted at the OIS rate.

    deposit
        ``N D(t,T)`` with ``D(t,T) = exp(-int_t^T c)``.
    forward
        ``N D(t,T) (F(t,T) - K)`` with ``F(t,T) = S exp(int_t^T (r - q))``.
    european_call
        ``N D(t,T) (F Phi(d1) - K Phi(d2))``, ``d1,2 = (ln(F/K) +- v/2)/sqrt(v)``
        and total variance ``v = int_t^T sigma^2``.

    ``vol`` is a constant or a :class:`PiecewiseConstant`; ``spot`` and ``t``
    broadcast against each other.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t > deal.maturity + 1e-12):
        raise ValueError(f"t={np.max(t)} is past maturity {deal.maturity}")
    T = deal.maturity
    t = np.minimum(t, T)
    scale = deal.direction * deal.notional
    disc = curves.discount(t, T)
    if deal.kind is DealKind.DEPOSIT:
        shape = np.broadcast(t, np.asarray(1.0 if spot is None else spot, dtype=float)).shape
        value = scale * disc * np.ones(shape)
        return CloseOutValues.from_value(value)

    spot = np.asarray(spot, dtype=float)
    fwd = spot * np.exp(curves.carry(t, T))
    K = deal.strike
    if deal.kind is DealKind.FORWARD:
        return CloseOutValues.from_value(scale * disc * (fwd - K))

    sig = as_curve(vol)
    var = PiecewiseConstant(sig.knots, tuple(v * v for v in sig.values)).integral(t, T)
    var = np.broadcast_to(var, np.broadcast(fwd, var).shape)
    fwd = np.broadcast_to(fwd, var.shape)
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        d1 = (np.log(fwd / K) + 0.5 * var) / sd
        d2 = d1 - sd
        undiscounted = np.where(
            sd > 0.0, fwd * ndtr(d1) - K * ndtr(d2), np.maximum(fwd - K, 0.0)
        )
    return CloseOutValues.from_value(scale * disc * undiscounted)


def close_out_target(close_out: CloseOutValues, defaulting, recoveries: tuple[float, float]):
    """Post-default value under a riskless close-out.

    ``recoveries`` is ``(R_I, R_H)``.  On investor default a liability of the
    investor (``V^C < 0``) is settled at ``R_I V^C``; on hedger default an
    asset of the investor (``V^C >= 0``) is settled at ``R_H V^C``.
    """
    r_inv, r_hed = recoveries
    v_c = close_out.v_c
    if Role(defaulting) is Role.INVESTOR:
        return np.where(v_c < 0.0, r_inv * v_c, v_c)
    return np.where(v_c < 0.0, v_c, r_hed * v_c)


def jump_values(v, close_out: CloseOutValues, defaulting, recoveries: tuple[float, float]):
    """Jump ``Delta V`` of the deal value when ``defaulting`` defaults."""
    return close_out_target(close_out, defaulting, recoveries) - np.asarray(v, dtype=float)
