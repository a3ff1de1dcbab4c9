"""Scenario files: schema, loading, normalisation and model construction.

A scenario is a YAML or JSON document.  Every credit input is required; a
time-dependent input is either a number (constant on ``[0, inf)``) or a
mapping ``{times, values, end}`` with left endpoints ``times``.  Unknown keys
are rejected.
"""

from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Literal, Optional, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .curves import PiecewiseConstant
from .instruments import DealSpec
from .market_model import (
    CorrelationSet,
    MarketModel,
    PartyCredit,
    RateCurves,
    Role,
    UnderlyingSpec,
    build_model,
)
from .mc_pricer import McConfig
from .pde_pricer import PdeGrid


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class CurveSpec(_Strict):
    times: list[float]
    values: list[float]
    end: float = math.inf

    @field_validator("end", mode="before")
    @classmethod
    def _parse_end(cls, v):
        if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
            return math.inf
        return v

    def to_curve(self) -> PiecewiseConstant:
        return PiecewiseConstant.from_steps(self.times, self.values, self.end)


Curve = Union[float, CurveSpec]


def _curve(x: Curve) -> PiecewiseConstant:
    return PiecewiseConstant.constant(float(x)) if isinstance(x, (int, float)) else x.to_curve()


def _normal_curve(x: Curve) -> dict:
    c = _curve(x)
    end = c.end if math.isfinite(c.end) else "inf"
    return {"times": list(c.knots[:-1]), "values": list(c.values), "end": end}


class CurvesSpec(_Strict):
    ois: Curve
    asset: Curve
    dividend: Curve


class PartySpec(_Strict):
    recovery: float
    spread0: float
    spread_drift: Curve
    spread_vol: Curve
    risk_premium: Curve
    basis: Curve


class PartiesSpec(_Strict):
    hedger: PartySpec
    investor: PartySpec


class UnderlyingSpecModel(_Strict):
    spot: float
    drift: Curve
    vol: Curve


class CorrelationSpec(_Strict):
    spot_investor: Curve
    spot_hedger: Curve
    hedger_investor: Curve


class DealSpecModel(_Strict):
    kind: Literal["deposit", "forward", "european_call"]
    notional: float
    maturity: float
    strike: Optional[float] = None
    direction: Literal[1, -1] = 1


class McSpec(_Strict):
    n_paths: int = 100_000
    dt: float = 0.01
    picard_tol: float = 1e-8
    picard_max_iter: int = 50
    mode: Literal["deterministic", "regression"] = "deterministic"
    degree: int = 2
    batch_size: int = 4096


class PdeSpec(_Strict):
    n_s: int = 200
    n_t: int = 200
    theta: float = 0.5


class HedgeSpec(_Strict):
    n_paths: int = 20_000
    dt: float = 0.01


class SolverSpec(_Strict):
    mc: McSpec = Field(default_factory=McSpec)
    pde: PdeSpec = Field(default_factory=PdeSpec)
    hedge: HedgeSpec = Field(default_factory=HedgeSpec)


class AgreementSpec(_Strict):
    gamma1: float
    gamma2: float


class Scenario(_Strict):
    curves: CurvesSpec
    parties: PartiesSpec
    underlying: UnderlyingSpecModel
    correlations: CorrelationSpec
    deal: DealSpecModel
    solver: SolverSpec = Field(default_factory=SolverSpec)
    agreement: Optional[AgreementSpec] = None
    seed: int

    def build_model(self) -> MarketModel:
        c = self.curves
        parties = {}
        for role in (Role.HEDGER, Role.INVESTOR):
            p = getattr(self.parties, role.value)
            parties[role] = PartyCredit(
                recovery=p.recovery,
                spread0=p.spread0,
                spread_drift=_curve(p.spread_drift),
                spread_vol=_curve(p.spread_vol),
                risk_premium=_curve(p.risk_premium),
                basis=_curve(p.basis),
                role=role,
            )
        u = self.underlying
        corr = self.correlations
        return build_model(
            RateCurves(_curve(c.ois), _curve(c.asset), _curve(c.dividend)),
            parties[Role.HEDGER],
            parties[Role.INVESTOR],
            UnderlyingSpec(u.spot, _curve(u.drift), _curve(u.vol)),
            CorrelationSet(
                _curve(corr.spot_investor), _curve(corr.spot_hedger), _curve(corr.hedger_investor)
            ),
            horizon=self.deal.maturity,
        )

    def build_deal(self) -> DealSpec:
        d = self.deal
        return DealSpec(d.kind, d.notional, d.maturity, d.strike, d.direction)

    def mc_config(self, seed: int | None = None) -> McConfig:
        m = self.solver.mc
        return McConfig(
            n_paths=m.n_paths,
            dt=m.dt,
            seed=self.seed if seed is None else seed,
            picard_tol=m.picard_tol,
            picard_max_iter=m.picard_max_iter,
            mode=m.mode,
            degree=m.degree,
            batch_size=m.batch_size,
        )

    def pde_grid(self) -> PdeGrid:
        p = self.solver.pde
        return PdeGrid(n_s=p.n_s, n_t=p.n_t, theta=p.theta)

    def normalized(self) -> dict:
        """Plain-data form with every curve expanded to ``{times, values, end}``."""
        data = self.model_dump(mode="python")
        sections = {
            ("curves",): self.curves,
            ("parties", "hedger"): self.parties.hedger,
            ("parties", "investor"): self.parties.investor,
            ("underlying",): self.underlying,
            ("correlations",): self.correlations,
        }
        for path, spec in sections.items():
            target = data
            for key in path:
                target = target[key]
            for name in _CURVE_FIELDS[type(spec)]:
                target[name] = _normal_curve(getattr(spec, name))
        return data


_CURVE_FIELDS = {
    CurvesSpec: ("ois", "asset", "dividend"),
    PartySpec: ("spread_drift", "spread_vol", "risk_premium", "basis"),
    UnderlyingSpecModel: ("drift", "vol"),
    CorrelationSpec: ("spot_investor", "spot_hedger", "hedger_investor"),
}


def parse_scenario(text: str, suffix: str = ".yaml") -> Scenario:
    data = json.loads(text) if suffix.lower() == ".json" else yaml.safe_load(text)
    if not isinstance(data, dict):
        raise ValueError("scenario must be a mapping at the top level")
    return Scenario.model_validate(data)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    return parse_scenario(path.read_text(), path.suffix)


def dump_scenario(scenario: Scenario, fmt: str = "yaml") -> str:
    data = scenario.normalized()
    if fmt == "json":
        return json.dumps(data, indent=2, sort_keys=True)
    return yaml.safe_dump(data, sort_keys=True)
