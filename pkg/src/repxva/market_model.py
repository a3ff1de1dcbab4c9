"""Market dynamics: rate curves, party credit, correlated path simulation.

Spot follows a geometric diffusion, both short-term CDS spreads follow
arithmetic diffusions floored at zero, and default times are sampled
doubly-stochastically from the risk-neutral intensity
``lambda = spread / (1 - recovery)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable

import numpy as np

from .curves import CoverageError, PiecewiseConstant, as_curve, merged_knots

# Paths are generated in fixed blocks so that any batch made of whole blocks
# reproduces the serial result bit for bit.
RNG_BLOCK = 512

SPOT, INVESTOR, HEDGER = 0, 1, 2
_THRESHOLD_STREAM = {HEDGER: 3, INVESTOR: 4}


class ModelError(ValueError):
    """Invalid model input; ``field`` names the offending input."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class Role(str, Enum):
    HEDGER = "hedger"
    INVESTOR = "investor"


@dataclass(frozen=True)
class RateCurves:
    """OIS/collateral rate ``c``, asset funding rate ``r`` and dividend yield ``q``."""

    ois: PiecewiseConstant
    asset: PiecewiseConstant
    dividend: PiecewiseConstant

    def __post_init__(self):
        for name in ("ois", "asset", "dividend"):
            object.__setattr__(self, name, as_curve(getattr(self, name)))

    @property
    def end(self) -> float:
        return min(self.ois.end, self.asset.end, self.dividend.end)

    def discount(self, t, T):
        """Collateral discount factor ``exp(-int_t^T c)``."""
        return np.exp(-self.ois.integral(t, T))

    def carry(self, t, T):
        """``int_t^T (r - q)``."""
        return self.asset.integral(t, T) - self.dividend.integral(t, T)


@dataclass(frozen=True)
class PartyCredit:
    """Credit and funding description of one party.

    ``basis`` is the bond-CDS basis; the short-term funding spread over OIS is
    derived as ``basis + spread`` and never stored.
    """

    recovery: float
    spread0: float
    spread_drift: PiecewiseConstant
    spread_vol: PiecewiseConstant
    risk_premium: PiecewiseConstant
    basis: PiecewiseConstant
    role: Role

    def __post_init__(self):
        for name in ("spread_drift", "spread_vol", "risk_premium", "basis"):
            object.__setattr__(self, name, as_curve(getattr(self, name)))
        object.__setattr__(self, "role", Role(self.role))

    @property
    def end(self) -> float:
        return min(c.end for c in (self.spread_drift, self.spread_vol, self.risk_premium, self.basis))

    @property
    def lgd(self) -> float:
        return 1.0 - self.recovery

    def intensity(self, spread):
        """Risk-neutral default intensity implied by a short-term spread."""
        return np.asarray(spread) / self.lgd

    def funding_spread(self, t, spread):
        return self.basis(t) + spread

    def q_drift(self) -> PiecewiseConstant:
        """Risk-neutral spread drift ``mu - M * sigma`` as a curve."""
        return _combine(
            lambda m, p, s: m - p * s, self.spread_drift, self.risk_premium, self.spread_vol
        )

    @property
    def deterministic(self) -> bool:
        return all(v == 0.0 for v in self.spread_vol.values)

    def with_basis(self, basis) -> "PartyCredit":
        return replace(self, basis=as_curve(basis))

    def with_role(self, role) -> "PartyCredit":
        return replace(self, role=Role(role))


@dataclass(frozen=True)
class UnderlyingSpec:
    spot: float
    drift: PiecewiseConstant
    vol: PiecewiseConstant

    def __post_init__(self):
        object.__setattr__(self, "drift", as_curve(self.drift))
        object.__setattr__(self, "vol", as_curve(self.vol))

    @property
    def end(self) -> float:
        return min(self.drift.end, self.vol.end)

    def total_variance(self, t, T):
        return PiecewiseConstant(self.vol.knots, tuple(v * v for v in self.vol.values)).integral(t, T)


@dataclass(frozen=True)
class CorrelationSet:
    spot_investor: PiecewiseConstant
    spot_hedger: PiecewiseConstant
    hedger_investor: PiecewiseConstant

    def __post_init__(self):
        for name in ("spot_investor", "spot_hedger", "hedger_investor"):
            object.__setattr__(self, name, as_curve(getattr(self, name)))

    @classmethod
    def independent(cls) -> "CorrelationSet":
        return cls(0.0, 0.0, 0.0)

    @property
    def end(self) -> float:
        return min(self.spot_investor.end, self.spot_hedger.end, self.hedger_investor.end)

    def matrix(self, t: float) -> np.ndarray:
        """3x3 correlation matrix ordered (spot, investor, hedger)."""
        return self.matrix_from(self.spot_investor(t), self.spot_hedger(t), self.hedger_investor(t))

    @staticmethod
    def matrix_from(si: float, sh: float, hi: float) -> np.ndarray:
        return np.array([[1.0, si, sh], [si, 1.0, hi], [sh, hi, 1.0]])


@dataclass(frozen=True)
class MarketModel:
    curves: RateCurves
    hedger: PartyCredit
    investor: PartyCredit
    underlying: UnderlyingSpec
    correlations: CorrelationSet

    @property
    def horizon(self) -> float:
        return min(
            self.curves.end,
            self.hedger.end,
            self.investor.end,
            self.underlying.end,
            self.correlations.end,
        )

    def party(self, role) -> PartyCredit:
        return self.hedger if Role(role) is Role.HEDGER else self.investor

    @property
    def deterministic_spreads(self) -> bool:
        return self.hedger.deterministic and self.investor.deterministic

    def replace(self, **changes) -> "MarketModel":
        return build_model(
            changes.get("curves", self.curves),
            changes.get("hedger", self.hedger),
            changes.get("investor", self.investor),
            changes.get("underlying", self.underlying),
            changes.get("correlations", self.correlations),
            horizon=changes.get("horizon"),
        )

    def swapped(self) -> "MarketModel":
        """Same market with hedger and investor roles interchanged."""
        corr = self.correlations
        return self.replace(
            hedger=self.investor.with_role(Role.HEDGER),
            investor=self.hedger.with_role(Role.INVESTOR),
            correlations=CorrelationSet(corr.spot_hedger, corr.spot_investor, corr.hedger_investor),
        )


def _combine(fn: Callable, *curves: PiecewiseConstant) -> PiecewiseConstant:
    """Pointwise combination of piecewise-constant curves on merged knots."""
    lo = max(c.knots[0] for c in curves)
    hi = min(c.end for c in curves)
    knots = {lo, hi}
    for c in curves:
        knots.update(k for k in c.knots if lo < k < hi)
    knots = sorted(knots)
    left = knots[:-1]
    values = [fn(*(c(t) for c in curves)) for t in left]
    return PiecewiseConstant(tuple(knots), tuple(values))


def _check_nonnegative(curve: PiecewiseConstant, name: str) -> None:
    if min(curve.values) < 0.0:
        raise ModelError(name, f"must be >= 0, got {min(curve.values)}")


def _check_correlation_psd(corr: CorrelationSet, horizon: float, tol: float = 1e-12) -> None:
    for name in ("spot_investor", "spot_hedger", "hedger_investor"):
        c = getattr(corr, name)
        if min(c.values) < -1.0 or max(c.values) > 1.0:
            raise ModelError(f"correlations.{name}", "must lie in [-1, 1]")
    pts = merged_knots(
        (corr.spot_investor, corr.spot_hedger, corr.hedger_investor), 0.0, horizon
    )
    for t in pts[:-1]:
        m = corr.matrix(float(t))
        smallest = np.linalg.eigvalsh(m)[0]
        if smallest < -tol:
            raise ModelError(
                "correlations",
                f"matrix not positive semi-definite at t={t:g} "
                f"(smallest eigenvalue {smallest:.6g})",
            )


def build_model(
    curves: RateCurves,
    hedger: PartyCredit,
    investor: PartyCredit,
    underlying: UnderlyingSpec,
    correlations: CorrelationSet,
    horizon: float | None = None,
) -> MarketModel:
    """Validate inputs and return an immutable :class:`MarketModel`.

    ``horizon`` is the time up to which every curve must be defined; it
    defaults to the shortest curve coverage.
    """
    for label, party, role in (("hedger", hedger, Role.HEDGER), ("investor", investor, Role.INVESTOR)):
        if party.role is not role:
            raise ModelError(f"{label}.role", f"expected {role.value}, got {party.role.value}")
        if not 0.0 <= party.recovery < 1.0:
            raise ModelError(f"{label}.recovery", f"must lie in [0, 1), got {party.recovery}")
        if party.spread0 < 0.0:
            raise ModelError(f"{label}.spread0", f"must be >= 0, got {party.spread0}")
        _check_nonnegative(party.spread_vol, f"{label}.spread_vol")
    if not underlying.spot > 0.0:
        raise ModelError("underlying.spot", f"must be > 0, got {underlying.spot}")
    _check_nonnegative(underlying.vol, "underlying.vol")

    model = MarketModel(curves, hedger, investor, underlying, correlations)
    covered = model.horizon
    if horizon is not None:
        if covered < horizon:
            raise ModelError("horizon", f"curves cover [0, {covered:g}] but {horizon:g} is required")
    _check_correlation_psd(correlations, min(covered, horizon if horizon is not None else covered))
    return model


@dataclass(frozen=True)
class QDynamics:
    """Risk-neutral drifts and intensity maps of a model."""

    spot_carry: PiecewiseConstant
    hedger_drift: PiecewiseConstant
    investor_drift: PiecewiseConstant
    hedger_lgd: float
    investor_lgd: float

    def hedger_intensity(self, spread):
        return np.asarray(spread) / self.hedger_lgd

    def investor_intensity(self, spread):
        return np.asarray(spread) / self.investor_lgd


def q_dynamics(model: MarketModel) -> QDynamics:
    carry = _combine(lambda r, q: r - q, model.curves.asset, model.curves.dividend)
    return QDynamics(
        spot_carry=carry,
        hedger_drift=model.hedger.q_drift(),
        investor_drift=model.investor.q_drift(),
        hedger_lgd=model.hedger.lgd,
        investor_lgd=model.investor.lgd,
    )


def time_grid(maturity: float, dt: float | None = None, n_steps: int | None = None) -> np.ndarray:
    """Uniform grid on ``[0, maturity]`` from a step size or a step count."""
    if n_steps is None:
        if dt is None:
            raise ValueError("give dt or n_steps")
        n_steps = max(1, int(round(maturity / dt)))
    return np.linspace(0.0, maturity, n_steps + 1)


def deterministic_spread(party: PartyCredit, grid: np.ndarray, measure: str = "Q") -> np.ndarray:
    """Zero-vol spread path on ``grid`` with the same Euler/flooring rule as the simulator."""
    drift = party.q_drift() if measure == "Q" else party.spread_drift
    inc = drift.integral(grid[:-1], grid[1:])
    out = party.spread0 + np.concatenate([[0.0], np.cumsum(inc)])
    if out.min() >= 0.0:
        return out
    out[0] = party.spread0
    for i, d in enumerate(inc.tolist()):
        out[i + 1] = max(out[i] + d, 0.0)
    return out


def survival_compensator(intensity: np.ndarray, grid: np.ndarray) -> np.ndarray:
    """Trapezoid-accumulated intensity along the last axis."""
    dt = np.diff(grid)
    inc = 0.5 * (intensity[..., 1:] + intensity[..., :-1]) * dt
    out = np.zeros(intensity.shape)
    np.cumsum(inc, axis=-1, out=out[..., 1:])
    return out


@dataclass
class PathSet:
    """Simulated paths for paths ``start .. start + n_paths - 1``.

    Spread arrays of parties with zero spread vol are read-only broadcast
    views.  ``spot`` is ``None`` when the underlying was not requested.
    Default times are grid times or ``inf``; ``*_index`` holds the grid index
    of the default node, or ``len(times)`` when no default occurred.
    """

    times: np.ndarray
    spot: np.ndarray | None
    investor_spread: np.ndarray
    hedger_spread: np.ndarray
    tau_investor: np.ndarray
    tau_hedger: np.ndarray
    investor_index: np.ndarray
    hedger_index: np.ndarray
    seed: int
    start: int
    n_paths: int
    increments: np.ndarray | None = field(default=None, repr=False)

    def alive(self) -> np.ndarray:
        """Boolean (paths x nodes): both parties alive strictly after each node."""
        idx = np.arange(len(self.times))
        return (self.investor_index[:, None] > idx) & (self.hedger_index[:, None] > idx)


def _cholesky_psd(m: np.ndarray) -> np.ndarray:
    n = m.shape[0]
    L = np.zeros_like(m)
    for j in range(n):
        d = m[j, j] - L[j, :j] @ L[j, :j]
        if d <= 1e-14:
            continue
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, n):
            L[i, j] = (m[i, j] - L[i, :j] @ L[j, :j]) / L[j, j]
    return L


def _cholesky_on_grid(corr: CorrelationSet, left: np.ndarray) -> np.ndarray:
    """Cholesky factor at each left node, factorised once per distinct segment."""
    keys = np.stack([corr.spot_investor(left), corr.spot_hedger(left), corr.hedger_investor(left)], axis=1)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    factors = np.stack([_cholesky_psd(corr.matrix_from(*row)) for row in uniq])
    return factors[np.asarray(inverse).reshape(-1)]


def _block_rng(seed: int, block: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, block, stream])))


def simulate_paths(
    model: MarketModel,
    grid,
    n_paths: int,
    seed: int,
    *,
    start: int = 0,
    measure: str = "Q",
    underlying: bool = True,
    return_increments: bool = False,
) -> PathSet:
    """Simulate spot, both spreads and both default times on ``grid``.

    Spot uses a log-Euler step, spreads an arithmetic Euler step floored at
    zero.  Each party defaults at the first node where the trapezoid
    accumulated intensity reaches an independent unit-exponential threshold.
    Under ``measure="P"`` the real-world drifts are used for spot and spreads;
    default sampling always uses the risk-neutral intensity.
    """
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ValueError("grid needs at least two nodes")
    if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must start at 0 and be strictly increasing")
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    if start < 0:
        raise ValueError("start must be >= 0")
    if measure not in ("P", "Q"):
        raise ValueError(f"unknown measure {measure!r}")
    if grid[-1] > model.horizon:
        raise CoverageError(f"grid ends at {grid[-1]} beyond model horizon {model.horizon}")

    m = len(grid)
    left = grid[:-1]
    dt = np.diff(grid)
    parties = {INVESTOR: model.investor, HEDGER: model.hedger}

    vols = np.zeros((3, m - 1))
    if underlying:
        vols[SPOT] = model.underlying.vol(left)
    vols[INVESTOR] = model.investor.spread_vol(left)
    vols[HEDGER] = model.hedger.spread_vol(left)
    active = [k for k in range(3) if np.any(vols[k] != 0.0)]

    chol = _cholesky_on_grid(model.correlations, left)
    needed = sorted({j for k in active for j in range(3) if np.any(chol[:, k, j] != 0.0)})
    if return_increments:
        needed = [0, 1, 2]

    first_block = start // RNG_BLOCK
    last_block = (start + n_paths - 1) // RNG_BLOCK
    offset = start - first_block * RNG_BLOCK
    blocks = range(first_block, last_block + 1)

    def draws(stream: int, shape_tail: tuple, kind: str) -> np.ndarray:
        chunks = []
        for b in blocks:
            rng = _block_rng(seed, b, stream)
            if kind == "normal":
                chunks.append(rng.standard_normal((RNG_BLOCK,) + shape_tail))
            else:
                chunks.append(rng.standard_exponential(RNG_BLOCK))
        return np.concatenate(chunks)[offset : offset + n_paths]

    dW = None
    if needed:
        z = np.zeros((n_paths, m - 1, 3))
        for j in needed:
            z[:, :, j] = draws(j, (m - 1,), "normal")
        # correlated unit-variance increments, then scale by sqrt(dt)
        dW = np.einsum("tkj,ptj->ptk", chol, z) * np.sqrt(dt)[None, :, None]

    spot = None
    if underlying:
        s_vol = vols[SPOT]
        if measure == "Q":
            drift_int = model.curves.carry(left, grid[1:])
        else:
            drift_int = model.underlying.drift.integral(left, grid[1:])
        log_inc = drift_int - 0.5 * s_vol**2 * dt
        log_inc = np.broadcast_to(log_inc, (n_paths, m - 1))
        if SPOT in active:
            log_inc = log_inc + s_vol * dW[:, :, SPOT]
        logs = np.zeros((n_paths, m))
        np.cumsum(log_inc, axis=1, out=logs[:, 1:])
        spot = model.underlying.spot * np.exp(logs)

    spreads = {}
    for k, party in parties.items():
        if k not in active:
            path = deterministic_spread(party, grid, measure)
            spreads[k] = np.broadcast_to(path, (n_paths, m))
            continue
        drift_curve = party.q_drift() if measure == "Q" else party.spread_drift
        drift_int = drift_curve.integral(left, grid[1:])
        sig = vols[k]
        pi = np.empty((n_paths, m))
        pi[:, 0] = party.spread0
        for i in range(m - 1):
            pi[:, i + 1] = np.maximum(pi[:, i] + drift_int[i] + sig[i] * dW[:, i, k], 0.0)
        spreads[k] = pi

    taus, indices = {}, {}
    for k, party in parties.items():
        threshold = draws(_THRESHOLD_STREAM[k], (), "exp")
        if k in active:
            comp = survival_compensator(party.intensity(spreads[k]), grid)
            hit = comp >= threshold[:, None]
            idx = np.where(hit.any(axis=1), hit.argmax(axis=1), m)
        else:
            comp = survival_compensator(party.intensity(spreads[k][0]), grid)
            # first node whose compensator reaches the threshold
            idx = np.searchsorted(comp, threshold, side="left")
        idx = np.where(idx == 0, 1, idx)  # compensator is 0 at t=0 < threshold a.s.
        indices[k] = idx
        taus[k] = np.where(idx < m, grid[np.minimum(idx, m - 1)], np.inf)

    return PathSet(
        times=grid,
        spot=spot,
        investor_spread=spreads[INVESTOR],
        hedger_spread=spreads[HEDGER],
        tau_investor=taus[INVESTOR],
        tau_hedger=taus[HEDGER],
        investor_index=indices[INVESTOR],
        hedger_index=indices[HEDGER],
        seed=seed,
        start=start,
        n_paths=n_paths,
        increments=dW if return_increments else None,
    )


def flat_model(
    *,
    ois: float,
    hedger_spread: float,
    investor_spread: float,
    hedger_recovery: float,
    investor_recovery: float,
    hedger_basis: float = 0.0,
    investor_basis: float = 0.0,
    spot: float = 100.0,
    asset_rate: float | None = None,
    dividend: float = 0.0,
    spot_vol: float = 0.2,
    spot_drift: float | None = None,
    hedger_spread_vol: float = 0.0,
    investor_spread_vol: float = 0.0,
    correlations: CorrelationSet | None = None,
) -> MarketModel:
    """Model with constant inputs, zero spread drifts and zero risk premia.

    ``asset_rate`` defaults to the OIS rate and ``spot_drift`` to the carry.
    """
    r = ois if asset_rate is None else asset_rate
    return build_model(
        RateCurves(ois, r, dividend),
        PartyCredit(hedger_recovery, hedger_spread, 0.0, hedger_spread_vol, 0.0, hedger_basis, Role.HEDGER),
        PartyCredit(
            investor_recovery, investor_spread, 0.0, investor_spread_vol, 0.0, investor_basis, Role.INVESTOR
        ),
        UnderlyingSpec(spot, r - dividend if spot_drift is None else spot_drift, spot_vol),
        correlations or CorrelationSet.independent(),
    )
