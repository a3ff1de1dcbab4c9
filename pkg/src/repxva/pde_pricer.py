"""Finite-difference solver for the deterministic-spread pricing PDE.

With zero spread vols the credit intensities are known functions of time and
the value ``V(t, S)`` solves::

    V_t + (r - q) S V_S + 0.5 sigma^2 S^2 V_SS
        - (c + gamma + lam_I + lam_H) V + lam_I X_I + lam_H X_H = 0,

where ``X_I``, ``X_H`` are the riskless close-out targets built from the
analytic collateralized value.  The reaction term is treated with the same
theta weighting as the diffusion; the source, which is known in closed form,
is theta-weighted between the two time levels.

The S-grid is log-spaced and the derivatives use three-point stencils on the
non-uniform grid, so functions linear in ``S`` are differentiated exactly.
Far-field conditions ``V_SS = 0`` are imposed by linear extrapolation of the
two nearest interior nodes, which keeps every solve tridiagonal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .instruments import DealKind, DealSpec, close_out_target, collateralized_value
from .market_model import MarketModel, Role, deterministic_spread
from .mc_pricer import ValuationBreakdown


@dataclass(frozen=True)
class PdeGrid:
    """Grid specification.

    ``s_min``/``s_max`` default to ``S0 exp(-+ width)`` with ``width`` five
    standard deviations of ``log S_T`` (at least 0.5) plus the absolute carry,
    and the grid is then placed so that ``S0`` is a node.
    """

    n_s: int = 200
    n_t: int = 200
    theta: float = 0.5
    s_min: float | None = None
    s_max: float | None = None
    rannacher_steps: int = 2

    def __post_init__(self):
        if self.n_s < 3:
            raise ValueError(f"n_s must be >= 3, got {self.n_s}")
        if self.n_t < 1:
            raise ValueError(f"n_t must be >= 1, got {self.n_t}")
        if not 0.0 <= self.theta <= 1.0:
            raise ValueError(f"theta must lie in [0, 1], got {self.theta}")
        if self.rannacher_steps < 0:
            raise ValueError("rannacher_steps must be >= 0")

    def nodes(self, spot: float, width: float) -> np.ndarray:
        if self.s_min is not None or self.s_max is not None:
            lo = self.s_min if self.s_min is not None else spot * math.exp(-width)
            hi = self.s_max if self.s_max is not None else spot * math.exp(width)
            if not lo < spot < hi:
                raise ValueError(f"need s_min < S0 < s_max, got {lo}, {spot}, {hi}")
            return np.exp(np.linspace(math.log(lo), math.log(hi), self.n_s))
        j0 = (self.n_s - 1) // 2
        h = width / max(j0, 1)
        x = math.log(spot) + h * (np.arange(self.n_s) - j0)
        s = np.exp(x)
        s[j0] = spot
        return s


@dataclass
class PdeResult:
    """Value surface ``values[i, j] = V(times[i], s[j])`` and ``V(0, S0)``."""

    value: float
    times: np.ndarray
    s: np.ndarray
    values: np.ndarray
    spot: float
    _splines: dict = field(default_factory=dict, repr=False)

    def _spline(self, i: int) -> CubicSpline:
        sp = self._splines.get(i)
        if sp is None:
            sp = CubicSpline(self.s, self.values[i], bc_type="natural")
            self._splines[i] = sp
        return sp

    def time_index(self, t: float) -> int:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9 * max(1.0, self.times[-1]):
            raise ValueError(f"t={t} is not a node of the PDE time grid")
        return i

    def value_at(self, t: float, spot) -> np.ndarray:
        return self._spline(self.time_index(t))(spot)

    def delta_at(self, t: float, spot) -> np.ndarray:
        return self._spline(self.time_index(t))(spot, 1)

    def gamma_at(self, t: float, spot) -> np.ndarray:
        return self._spline(self.time_index(t))(spot, 2)


def _stencils(s: np.ndarray):
    """Non-uniform three-point weights for ``V_S`` and ``V_SS`` at interior nodes."""
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    tot = hm + hp
    d1 = (-hp / (hm * tot), (hp - hm) / (hm * hp), hm / (hp * tot))
    d2 = (2.0 / (hm * tot), -2.0 / (hm * hp), 2.0 / (hp * tot))
    return d1, d2


def _extrapolation(s: np.ndarray):
    """Weights expressing each edge value through its two inner neighbours."""
    lo = (s[0] - s[2]) / (s[1] - s[2]), (s[1] - s[0]) / (s[1] - s[2])
    hi = (s[-1] - s[-3]) / (s[-2] - s[-3]), (s[-2] - s[-1]) / (s[-2] - s[-3])
    return lo, hi


class _Operator:
    """Tridiagonal interior operator ``L V = a V_{j-1} + b V_j + c V_{j+1}``."""

    def __init__(self, s, carry_rate, var_rate, reaction):
        d1, d2 = _stencils(s)
        x = s[1:-1]
        conv = carry_rate * x
        diff = 0.5 * var_rate * x * x
        self.a = conv * d1[0] + diff * d2[0]
        self.b = conv * d1[1] + diff * d2[1] - reaction
        self.c = conv * d1[2] + diff * d2[2]
        (w1, w2), (u1, u2) = _extrapolation(s)
        # fold V_0 = w1 V_1 + w2 V_2 and V_{n-1} = u1 V_{n-2} + u2 V_{n-3}
        self.b = self.b.copy()
        self.c = self.c.copy()
        self.a = self.a.copy()
        self.b[0] += self.a[0] * w1
        self.c[0] += self.a[0] * w2
        self.b[-1] += self.c[-1] * u1
        self.a[-1] += self.c[-1] * u2
        self.a[0] = 0.0
        self.c[-1] = 0.0
        self.w = (w1, w2, u1, u2)

    def apply(self, v):
        out = self.b * v
        out[1:] += self.a[1:] * v[:-1]
        out[:-1] += self.c[:-1] * v[1:]
        return out

    def solve_lhs(self, k: float, rhs):
        """Solve ``(I - k L) x = rhs``."""
        n = len(rhs)
        ab = np.zeros((3, n))
        ab[0, 1:] = -k * self.c[:-1]
        ab[1] = 1.0 - k * self.b
        ab[2, :-1] = -k * self.a[1:]
        return solve_banded((1, 1), ab, rhs)

    def extend(self, interior):
        w1, w2, u1, u2 = self.w
        lo = w1 * interior[0] + w2 * interior[1]
        hi = u1 * interior[-1] + u2 * interior[-2]
        return np.concatenate([[lo], interior, [hi]])


def _check_model(model: MarketModel) -> None:
    for label, party in (("hedger", model.hedger), ("investor", model.investor)):
        if not party.deterministic:
            raise ValueError(f"PDE solver needs zero spread vol; {label}.spread_vol is non-zero")


def _log_width(deal: DealSpec, model: MarketModel) -> float:
    sd = math.sqrt(float(model.underlying.total_variance(0.0, deal.maturity)))
    drift = abs(float(model.curves.carry(0.0, deal.maturity)))
    return max(5.0 * sd, 0.5) + drift


def _close_out(deal, model, s, t):
    return collateralized_value(deal, model.curves, s, model.underlying.vol, t)


def _value_source(deal, model, s, t, lam_i, lam_h):
    cv = _close_out(deal, model, s, t)
    rec = (model.investor.recovery, model.hedger.recovery)
    x_i = close_out_target(cv, Role.INVESTOR, rec)
    x_h = close_out_target(cv, Role.HEDGER, rec)
    return lam_i * x_i + lam_h * x_h


def _cva_source(deal, model, s, t, lam_i, lam_h):
    return lam_i * model.investor.lgd * _close_out(deal, model, s, t).v_c_neg


def _dva_source(deal, model, s, t, lam_i, lam_h):
    return -lam_h * model.hedger.lgd * _close_out(deal, model, s, t).v_c_pos


def _setup(deal: DealSpec, model: MarketModel, grid: PdeGrid):
    _check_model(model)
    T = deal.maturity
    if T > model.horizon + 1e-12:
        raise ValueError(f"deal maturity {T} beyond model horizon {model.horizon}")
    s = grid.nodes(model.underlying.spot, _log_width(deal, model))
    times = np.linspace(0.0, T, grid.n_t + 1)
    lam_i = model.investor.intensity(deterministic_spread(model.investor, times))
    lam_h = model.hedger.intensity(deterministic_spread(model.hedger, times))
    return s, times, lam_i, lam_h


def _solve(deal, model, grid, s, times, lam_i_nodes, lam_h_nodes, terminal, source, with_basis):
    """Backward theta-scheme for ``u_t + L u - rate u + source = 0``.

    ``rate`` is ``c + lam_I + lam_H`` plus the hedger basis when
    ``with_basis``; ``source(deal, model, s, t, lam_i, lam_h)`` is known.
    """
    values = np.empty((grid.n_t + 1, len(s)))
    values[-1] = terminal
    kinked = deal.kind is DealKind.EUROPEAN_CALL
    smoothing = grid.rannacher_steps if (kinked and grid.theta == 0.5) else 0
    th = grid.theta

    for n in range(grid.n_t - 1, -1, -1):
        t0, t1 = times[n], times[n + 1]
        mid = 0.5 * (t0 + t1)
        lam_i = 0.5 * (lam_i_nodes[n] + lam_i_nodes[n + 1])
        lam_h = 0.5 * (lam_h_nodes[n] + lam_h_nodes[n + 1])
        reaction = float(model.curves.ois(mid)) + lam_i + lam_h
        if with_basis:
            reaction += float(model.hedger.basis(mid))
        op = _Operator(
            s,
            float(model.curves.asset(mid)) - float(model.curves.dividend(mid)),
            float(model.underlying.vol(mid)) ** 2,
            reaction,
        )
        v1 = values[n + 1][1:-1]
        if grid.n_t - 1 - n < smoothing:
            # two fully implicit half steps
            half = 0.5 * (t1 - t0)
            v = v1
            for t_new in (t0 + half, t0):
                src = source(deal, model, s, t_new, lam_i, lam_h)[1:-1]
                v = op.solve_lhs(half, v + half * src)
            values[n] = op.extend(v)
            continue
        k = t1 - t0
        src0 = source(deal, model, s, t0, lam_i, lam_h)[1:-1]
        src1 = source(deal, model, s, t1, lam_i, lam_h)[1:-1]
        rhs = v1 + (1.0 - th) * k * op.apply(v1) + k * (th * src0 + (1.0 - th) * src1)
        v0 = op.solve_lhs(th * k, rhs) if th > 0.0 else rhs
        values[n] = op.extend(v0)
    return values


def _result(values, times, s, spot) -> PdeResult:
    result = PdeResult(value=0.0, times=times, s=s, values=values, spot=spot)
    j = np.flatnonzero(s == spot)
    result.value = float(values[0, j[0]]) if len(j) else float(result.value_at(0.0, spot))
    return result


def pde_price(deal: DealSpec, model: MarketModel, grid: PdeGrid | None = None) -> PdeResult:
    """Solve backward from the payoff and return the full surface.

    The first ``grid.rannacher_steps`` steps of a Crank-Nicolson run are
    replaced by two fully implicit half steps each when the payoff has a kink.
    """
    grid = grid or PdeGrid()
    s, times, lam_i, lam_h = _setup(deal, model, grid)
    values = _solve(
        deal, model, grid, s, times, lam_i, lam_h, deal.payoff(s), _value_source, True
    )
    return _result(values, times, s, model.underlying.spot)


def pde_breakdown(deal: DealSpec, model: MarketModel, grid: PdeGrid | None = None) -> ValuationBreakdown:
    """Value and its components from four grid solves.

    CVA and DVA solve the same equation without the basis, with zero terminal
    value and the discounted default payments as sources; FVA is the
    remainder ``v - v_c - cva - dva``.
    """
    grid = grid or PdeGrid()
    s, times, lam_i, lam_h = _setup(deal, model, grid)
    spot = model.underlying.spot
    v = pde_price(deal, model, grid).value
    zero = np.zeros(len(s))
    cva = _result(
        _solve(deal, model, grid, s, times, lam_i, lam_h, zero, _cva_source, False), times, s, spot
    ).value
    dva = _result(
        _solve(deal, model, grid, s, times, lam_i, lam_h, zero, _dva_source, False), times, s, spot
    ).value
    v_c = float(_close_out(deal, model, spot, 0.0).v_c)
    return ValuationBreakdown(
        v=v, v_c=v_c, fva=v - v_c - cva - dva, cva=cva, dva=dva, iterations=grid.n_t, solver="pde"
    )


def convergence_order(errors) -> list[float]:
    """Observed orders ``log2(e_k / e_{k+1})`` for successive halvings."""
    e = np.abs(np.asarray(errors, dtype=float))
    return [float(math.log2(a / b)) for a, b in zip(e[:-1], e[1:])]
