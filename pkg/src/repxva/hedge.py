"""Replicating-portfolio weights and a discrete replication simulation.

The portfolio holds a collateralized derivative ``H`` on the underlying
(``alpha`` units, financed by ``beta`` units of collateral), long- and
short-term CDS on the investor (``xi``, ``epsilon``), long- and short-term own
bonds (``omega_small``, ``omega_large``) and a short-term CDS on the hedger
itself (``eta``).  Short-term instruments live for one simulation step.

Gain conventions per unit held over a step of length ``dt``:

* collateralized derivative: ``dH``; collateral account: ``c dt``;
* own one-step bond bought at ``B = exp(-(c + gamma + pi^H) dt)`` and
  repaid at par, or at ``R_H`` on own default;
* protection sold on a one-step CDS on party ``k``: premium ``pi^k dt``,
  minus ``1 - R_k`` if ``k`` defaults.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .instruments import DealSpec, close_out_target, collateralized_value
from .market_model import MarketModel, Role, simulate_paths, time_grid
from .pde_pricer import PdeGrid, PdeResult, pde_price


class HedgeError(ValueError):
    """A hedge instrument has zero sensitivity to the risk it should offset."""

    def __init__(self, instrument: str, message: str):
        super().__init__(f"{instrument}: {message}")
        self.instrument = instrument


@dataclass(frozen=True)
class HedgeWeights:
    alpha: np.ndarray
    beta: np.ndarray
    xi: np.ndarray
    epsilon: np.ndarray
    omega_large: np.ndarray
    omega_small: np.ndarray
    eta: np.ndarray


def _ratio(num, den, instrument: str) -> np.ndarray:
    num = np.asarray(num, dtype=float)
    den = np.asarray(den, dtype=float)
    zero = den == 0.0
    if np.any(zero & (num != 0.0)):
        raise HedgeError(instrument, "sensitivity vanishes but the exposure does not")
    return np.where(zero, 0.0, num / np.where(zero, 1.0, den))


def hedge_weights(
    *,
    v,
    dv_ds,
    dh_ds,
    h,
    jump_i,
    jump_h,
    recoveries: tuple[float, float],
    bond_short,
    dv_dpi_i=0.0,
    dcds_dpi_i=0.0,
    cds_i=0.0,
    jump_cds_i=0.0,
    dv_dpi_h=0.0,
    dbond_dpi_h=0.0,
    bond_long=0.0,
) -> HedgeWeights:
    """Weights that remove every diffusive and jump exposure of ``V``.

    ``jump_i``/``jump_h`` are the jumps of ``V`` on investor/hedger default,
    ``jump_cds_i`` the jump of the long-term investor CDS, ``recoveries`` is
    ``(R_I, R_H)``.  A zero instrument sensitivity is accepted only when the
    matching exposure of ``V`` is zero too; the weight is then 0.
    """
    r_i, r_h = recoveries
    v = np.asarray(v, dtype=float)
    alpha = _ratio(dv_ds, dh_ds, "collateralized derivative")
    xi = _ratio(dv_dpi_i, dcds_dpi_i, "long-term investor CDS")
    omega_small = _ratio(dv_dpi_h, dbond_dpi_h, "long-term own bond")
    epsilon = (xi * np.asarray(jump_cds_i) - np.asarray(jump_i)) / (1.0 - r_i)
    eta = -v - np.asarray(jump_h) / (1.0 - r_h)
    omega_large = (v - omega_small * np.asarray(bond_long)) / np.asarray(bond_short)
    beta = -alpha * np.asarray(h) - xi * np.asarray(cds_i)
    return HedgeWeights(
        alpha=alpha,
        beta=beta,
        xi=xi,
        epsilon=np.asarray(epsilon, dtype=float),
        omega_large=np.asarray(omega_large, dtype=float),
        omega_small=omega_small,
        eta=np.asarray(eta, dtype=float),
    )


def funding_residual(w: HedgeWeights, v, bond_short, bond_long=0.0) -> np.ndarray:
    """``V - Omega B(t, t+dt) - omega B(t, T)``."""
    return np.asarray(v) - w.omega_large * bond_short - w.omega_small * bond_long


@dataclass
class ReplicationReport:
    """Statistics of a replication run; errors are per unit notional.

    ``terminal_errors[p]`` is the accumulated ``dV - dPi`` of path ``p`` up to
    its first default or maturity.  ``loadings``/``loading_se`` are the OLS
    coefficients (with heteroscedasticity-robust standard errors) of the
    no-default step error on the spot, investor and hedger Brownian increments.
    ``drift_gap`` is the per-path sum of ``dPi - (c + gamma) V dt``.
    """

    dt: float
    n_paths: int
    value: float
    terminal_errors: np.ndarray = field(repr=False)
    mean_error: float
    std_error: float
    loadings: np.ndarray
    loading_se: np.ndarray
    jump_residuals: np.ndarray = field(repr=False)
    n_ties: int
    funding_residual_max: float
    drift_gap_mean: float
    drift_gap_se: float

    @property
    def n_jump_events(self) -> int:
        return len(self.jump_residuals)

    @property
    def max_jump_residual(self) -> float:
        return float(np.max(np.abs(self.jump_residuals))) if len(self.jump_residuals) else 0.0

    def loadings_pass(self, n_se: float = 3.0) -> bool:
        return bool(np.all(np.abs(self.loadings) <= n_se * self.loading_se))

    def summary(self) -> dict:
        return {
            "dt": self.dt,
            "n_paths": self.n_paths,
            "value": self.value,
            "mean_error": self.mean_error,
            "std_error": self.std_error,
            "max_jump_residual": self.max_jump_residual,
            "n_jump_events": self.n_jump_events,
            "n_ties": self.n_ties,
            "funding_residual_max": self.funding_residual_max,
            "drift_gap_mean": self.drift_gap_mean,
            "drift_gap_se": self.drift_gap_se,
            **{f"loading_{k}": float(x) for k, x in zip(("spot", "investor", "hedger"), self.loadings)},
            **{f"loading_se_{k}": float(x) for k, x in zip(("spot", "investor", "hedger"), self.loading_se)},
        }


def _robust_ols(X: np.ndarray, y: np.ndarray):
    """OLS coefficients with White (HC0) standard errors."""
    xtx_inv = np.linalg.inv(X.T @ X)
    coef = xtx_inv @ (X.T @ y)
    resid = y - X @ coef
    meat = (X * resid[:, None] ** 2).T @ X
    cov = xtx_inv @ meat @ xtx_inv
    return coef, np.sqrt(np.diag(cov))


_GH_NODES, _GH_WEIGHTS = np.polynomial.hermite_e.hermegauss(40)
_GH_WEIGHTS = _GH_WEIGHTS / _GH_WEIGHTS.sum()


class _Surface:
    """Value and hedge sensitivities of ``V`` at simulation nodes, from a PDE solution."""

    def __init__(self, result: PdeResult, deal: DealSpec):
        self.result = result
        self.uses_spot = deal.depends_on_underlying

    def value(self, t: float, spot):
        return self.result.value_at(t, spot)

    def delta(self, t: float, spot):
        if not self.uses_spot:
            return np.zeros_like(np.asarray(spot, dtype=float))
        return self.result.delta_at(t, spot)

    def step_delta(self, t1: float, spot, log_drift: float, sd: float):
        """``Cov(V(t1, S1), S1) / Var(S1)``-type ratio ``E[V1 Z] / E[S1 Z]``.

        ``S1 = S exp(log_drift - sd^2/2 + sd Z)`` with ``Z`` standard normal
        is the simulated one-step transition; the expectations use
        Gauss-Hermite quadrature.  Tends to ``V_S`` as the step shrinks.
        """
        spot = np.asarray(spot, dtype=float)
        if not self.uses_spot:
            return np.zeros_like(spot)
        if sd == 0.0:
            return self.delta(t1, spot * math.exp(log_drift))
        growth = np.exp(log_drift - 0.5 * sd * sd + sd * _GH_NODES)
        v1 = self.value(t1, spot[:, None] * growth[None, :])
        ev_z = v1 @ (_GH_WEIGHTS * _GH_NODES)
        es_z = spot * math.exp(log_drift) * sd
        return ev_z / es_z


def _pde_steps(n_steps: int, minimum: int) -> int:
    return n_steps * max(1, math.ceil(minimum / n_steps))


def replication_pnl(
    deal: DealSpec,
    model: MarketModel,
    grid,
    n_paths: int,
    seed: int,
    *,
    pde_grid: PdeGrid | None = None,
    min_pde_steps: int = 400,
    hedge_ratio: str = "step",
) -> ReplicationReport:
    """Simulate the hedged portfolio along paths of the real-world measure.

    ``grid`` is a time grid on ``[0, T]`` or a step size.  ``V`` and its delta
    come from the PDE surface (spline-interpolated in ``S``) on a time grid
    refining the simulation grid.  Spreads must be deterministic.  At a
    default node the portfolio is rebalanced on the pre-default state before
    the jump legs are settled.

    ``hedge_ratio="step"`` sets ``alpha`` from the one-step covariance of
    ``V`` with the spot over the coming step (see ``_Surface.step_delta``),
    which removes the first-order discretisation bias of the spot loading;
    ``"delta"`` uses the instantaneous ``V_S``.  Both agree as ``dt -> 0``.
    """
    if hedge_ratio not in ("step", "delta"):
        raise ValueError(f"unknown hedge_ratio {hedge_ratio!r}")
    if not model.deterministic_spreads:
        raise ValueError("replication needs deterministic spreads (zero spread vols)")
    if np.ndim(grid) == 0:
        grid = time_grid(deal.maturity, dt=float(grid))
    grid = np.asarray(grid, dtype=float)
    if abs(grid[-1] - deal.maturity) > 1e-12:
        raise ValueError("grid must end at the deal maturity")
    m = len(grid)
    uniform = np.allclose(np.diff(grid), grid[1] - grid[0], rtol=1e-9, atol=0.0)
    if pde_grid is None:
        if not uniform:
            raise ValueError("non-uniform grids need an explicit pde_grid")
        pde_grid = PdeGrid(n_s=400, n_t=_pde_steps(m - 1, min_pde_steps))
    surface = _Surface(pde_price(deal, model, pde_grid), deal)

    paths = simulate_paths(
        model,
        grid,
        n_paths,
        seed,
        measure="P",
        underlying=deal.depends_on_underlying,
        return_increments=True,
    )
    T = deal.maturity
    curves = model.curves
    r_i, r_h = model.investor.recovery, model.hedger.recovery
    recs = (r_i, r_h)
    vol = model.underlying.vol
    spot0 = model.underlying.spot
    strike_h = spot0 * math.exp(float(curves.carry(0.0, T)))

    def h_value(t, s):
        return curves.discount(t, T) * (s * np.exp(curves.carry(t, T)) - strike_h)

    def h_delta(t):
        return float(curves.discount(t, T) * np.exp(curves.carry(t, T)))

    spot = paths.spot if paths.spot is not None else np.full((n_paths, m), spot0)
    pi_i = np.asarray(paths.investor_spread[0])
    pi_h = np.asarray(paths.hedger_spread[0])
    first = np.minimum(paths.investor_index, paths.hedger_index)
    tie = (paths.investor_index == paths.hedger_index) & (paths.investor_index < m)
    scale = 1.0 / abs(deal.notional)

    def state(k: int, s: np.ndarray):
        t = grid[k]
        v = surface.value(t, s)
        cv = collateralized_value(deal, curves, s, vol, t)
        jump_i = close_out_target(cv, Role.INVESTOR, recs) - v
        jump_h = close_out_target(cv, Role.HEDGER, recs) - v
        return v, jump_i, jump_h

    terminal = np.zeros(n_paths)
    drift_gap = np.zeros(n_paths)
    jump_res = []
    fund_max = 0.0
    step_err, step_dw = [], []
    v_k, jump_i_k, jump_h_k = state(0, spot[:, 0])
    v0 = float(np.mean(v_k))

    for k in range(m - 1):
        alive = first > k
        if not alive.any():
            break
        t0, t1 = grid[k], grid[k + 1]
        dt = t1 - t0
        rows = np.flatnonzero(alive)
        s0, s1 = spot[rows, k], spot[rows, k + 1]
        v = v_k[rows]
        ois_int = float(curves.ois.integral(t0, t1))
        basis_int = float(model.hedger.basis.integral(t0, t1))
        prem_i = 0.5 * (pi_i[k] + pi_i[k + 1]) * dt
        prem_h = 0.5 * (pi_h[k] + pi_h[k + 1]) * dt
        bond_short = math.exp(-(ois_int + basis_int + prem_h))

        if hedge_ratio == "step":
            log_drift = float(model.underlying.drift.integral(t0, t1))
            sd = math.sqrt(float(model.underlying.total_variance(t0, t1)))
            # dH is linear in S1, so matching Cov(dV, S1) needs the ratio of H_S
            dv_ds = surface.step_delta(t1, s0, log_drift, sd) * h_delta(t0) / h_delta(t1)
        else:
            dv_ds = surface.delta(t0, s0)
        w = hedge_weights(
            v=v,
            dv_ds=dv_ds,
            dh_ds=h_delta(t0),
            h=h_value(t0, s0),
            jump_i=jump_i_k[rows],
            jump_h=jump_h_k[rows],
            recoveries=recs,
            bond_short=bond_short,
        )
        fund_max = max(fund_max, float(np.max(np.abs(funding_residual(w, v, bond_short)))))

        gain = (
            w.alpha * (h_value(t1, s1) - h_value(t0, s0))
            + w.beta * math.expm1(ois_int)
            + w.omega_large * (1.0 - bond_short)
            + w.epsilon * prem_i
            + w.eta * prem_h
        )

        v_next_all, jump_i_next, jump_h_next = state(k + 1, spot[:, k + 1])
        dv = v_next_all[rows] - v
        err = dv - gain
        pnl = gain.copy()

        ends = first[rows] == k + 1
        inv_def = ends & (paths.investor_index[rows] == k + 1) & ~tie[rows]
        hed_def = ends & (paths.hedger_index[rows] == k + 1) & ~tie[rows]
        if inv_def.any() or hed_def.any():
            # rebalance on the pre-default state, then settle the jump legs
            sel = inv_def | hed_def
            s_now = s1[sel]
            v_now = v_next_all[rows][sel]
            w_now = hedge_weights(
                v=v_now,
                dv_ds=surface.delta(t1, s_now),
                dh_ds=h_delta(t1),
                h=h_value(t1, s_now),
                jump_i=jump_i_next[rows][sel],
                jump_h=jump_h_next[rows][sel],
                recoveries=recs,
                bond_short=bond_short,
            )
            is_inv = inv_def[sel]
            legs = np.where(
                is_inv,
                -w_now.epsilon * (1.0 - r_i),
                -(1.0 - r_h) * w_now.omega_large * bond_short - w_now.eta * (1.0 - r_h),
            )
            jv = np.where(is_inv, jump_i_next[rows][sel], jump_h_next[rows][sel])
            jump_res.append((legs - jv) * scale)
            idx = np.flatnonzero(sel)
            err[idx] += jv - legs
            pnl[idx] += legs

        drift_gap[rows] += pnl - (ois_int + basis_int) * v
        terminal[rows] += err
        quiet = ~ends
        step_err.append(err[quiet] * scale)
        step_dw.append(paths.increments[rows[quiet], k, :])
        v_k, jump_i_k, jump_h_k = v_next_all, jump_i_next, jump_h_next

    terminal *= scale
    drift_gap *= scale
    y = np.concatenate(step_err)
    dw = np.concatenate(step_dw)
    X = np.column_stack([np.ones(len(y)), dw])
    coef, se = _robust_ols(X, y)
    dt_mean = float(np.mean(np.diff(grid)))
    return ReplicationReport(
        dt=dt_mean,
        n_paths=n_paths,
        value=v0,
        terminal_errors=terminal,
        mean_error=float(terminal.mean()),
        std_error=float(terminal.std(ddof=1)) if n_paths > 1 else 0.0,
        loadings=coef[1:],
        loading_se=se[1:],
        jump_residuals=np.concatenate(jump_res) if jump_res else np.zeros(0),
        n_ties=int(tie.sum()),
        funding_residual_max=fund_max,
        drift_gap_mean=float(drift_gap.mean()),
        drift_gap_se=float(drift_gap.std(ddof=1) / math.sqrt(n_paths)) if n_paths > 1 else 0.0,
    )
