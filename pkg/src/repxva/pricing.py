"""Single entry point dispatching a deal to one of the three solvers."""

from __future__ import annotations

from .closed_form import closed_form_breakdown
from .instruments import DealSpec
from .market_model import MarketModel
from .mc_pricer import McConfig, ValuationBreakdown, mc_price
from .pde_pricer import PdeGrid, pde_breakdown

SOLVERS = ("closed-form", "mc", "pde")


def price(
    deal: DealSpec,
    model: MarketModel,
    solver: str = "closed-form",
    mc: McConfig | None = None,
    pde: PdeGrid | None = None,
) -> ValuationBreakdown:
    """Investor-view value and components of ``deal`` under ``model``."""
    if solver == "closed-form":
        b = closed_form_breakdown(deal, model)
        return ValuationBreakdown(
            v=b.v, v_c=b.v_c, fva=b.fva, cva=b.cva, dva=b.dva, solver="closed-form"
        )
    if solver == "mc":
        return mc_price(deal, model, mc or McConfig())
    if solver == "pde":
        return pde_breakdown(deal, model, pde)
    raise ValueError(f"unknown solver {solver!r}; expected one of {SOLVERS}")
