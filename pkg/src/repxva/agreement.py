"""Price agreement between two counterparties and basis sensitivity.

Each counterparty prices as the hedger with its own bond-CDS basis.  With
``F(gamma)`` the value of the deal to counterparty 1 when the hedging side has
basis ``gamma``, counterparty 1 is willing to pay ``F(gamma1)`` and
counterparty 2 asks for ``F(gamma2)``; the deal closes iff
``F(gamma2) <= F(gamma1)``.

Conventions: in every function of this module ``model.hedger`` carries the
credit inputs of counterparty 1 and ``model.investor`` those of counterparty
2, and ``deal.direction`` is the sign seen by counterparty 1.  Basis values
already stored in ``model`` are overwritten by the bases passed in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .closed_form import deposit_params_from_model, deposit_value_curve
from .curves import as_curve, merged_knots
from .instruments import DealKind, DealSpec
from .market_model import MarketModel
from .mc_pricer import McConfig, fva_kernel
from .pricing import price


@dataclass(frozen=True)
class AgreementResult:
    v1: float
    v2_ask: float
    closes: bool
    margin: float


def _with_hedger_basis(model: MarketModel, gamma) -> MarketModel:
    return model.replace(hedger=model.hedger.with_basis(gamma))


def _default_solver(deal: DealSpec) -> str:
    return "closed-form" if deal.kind is DealKind.DEPOSIT else "mc"


def value_to_first(
    deal: DealSpec,
    model: MarketModel,
    gamma: float,
    hedger: int,
    solver: str | None = None,
    mc: McConfig | None = None,
) -> float:
    """Value of ``deal`` to counterparty 1 when counterparty ``hedger`` prices.

    ``hedger=1``: counterparty 1 hedges and counterparty 2 is the investor
    holding the mirrored deal, so the value to counterparty 1 is minus the
    investor's value.  ``hedger=2``: roles are swapped and counterparty 1 is
    the investor.
    """
    solver = solver or _default_solver(deal)
    if hedger == 1:
        m = _with_hedger_basis(model, gamma)
        return -price(deal.flipped(), m, solver, mc).v
    if hedger == 2:
        m = _with_hedger_basis(model.swapped(), gamma)
        return price(deal, m, solver, mc).v
    raise ValueError("hedger must be 1 or 2")


def deal_closes(
    deal: DealSpec,
    model: MarketModel,
    gamma1: float,
    gamma2: float,
    solver: str | None = None,
    mc: McConfig | None = None,
) -> AgreementResult:
    """Evaluate ``F(gamma1)`` and ``F(gamma2)`` and decide whether the deal closes."""
    f1 = value_to_first(deal, model, gamma1, 1, solver, mc)
    f2 = value_to_first(deal, model, gamma2, 2, solver, mc)
    margin = f1 - f2
    return AgreementResult(v1=f1, v2_ask=f2, closes=bool(margin >= 0.0), margin=margin)


def _gauss_legendre(a: float, b: float, n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    half = 0.5 * (b - a)
    return a + half * (x + 1.0), half * w


def _deposit_sensitivity(deal: DealSpec, model: MarketModel, nodes: int) -> float:
    params, sign = deposit_params_from_model(deal, model)
    lam = as_curve(params.lambda_investor).values[0] + as_curve(params.lambda_hedger).values[0]
    ois = as_curve(params.ois)
    basis = as_curve(params.basis)
    knots = merged_knots((ois, basis), 0.0, params.horizon)
    total = 0.0
    for a, b in zip(knots[:-1], knots[1:]):
        s, w = _gauss_legendre(float(a), float(b), nodes)
        v_s = deposit_value_curve(params, s)
        weight = np.exp(-ois.cumulative(s) - basis.cumulative(s) - lam * s)
        total += float(np.sum(w * weight * v_s))
    return -sign * total


def _mc_sensitivity(deal: DealSpec, model: MarketModel, mc: McConfig) -> float:
    """Exact derivative of the discretised deterministic-mode value.

    With ``w = (I + K)^{-1} b`` and ``K = gamma * K1`` for a constant basis,
    ``dV/dgamma = -[(I + K)^{-1} K1 w]_0``; ``b`` does not depend on the basis.
    """
    out = price(deal, model, "mc", mc)
    grid, w = out.profile["grid"], out.profile["w"]
    K = fva_kernel(model, grid)
    K1 = fva_kernel(_with_hedger_basis(model, 1.0), grid)
    return -float(np.linalg.solve(np.eye(len(grid)) + K, K1 @ w)[0])


def dv_dgamma(
    deal: DealSpec,
    model: MarketModel,
    gamma: float,
    method: str = "analytic-integral",
    h: float = 1e-5,
    solver: str | None = None,
    mc: McConfig | None = None,
    quadrature_nodes: int = 64,
) -> float:
    """Sensitivity of the investor-view value to a constant hedger basis.

    ``analytic-integral`` evaluates
    ``-E[int_0^T 1{both alive at s} exp(-int_0^s (c + gamma)) V_s ds]``: by
    Gauss-Legendre quadrature of the closed-form value curve for deposits,
    and as the exact derivative of the discretised Monte Carlo equation
    otherwise.  ``finite-difference`` central-differences the pricer at
    ``gamma +- h`` (with common random numbers for Monte Carlo).
    """
    solver = solver or _default_solver(deal)
    base = _with_hedger_basis(model, gamma)
    if method == "finite-difference":
        up = price(deal, _with_hedger_basis(model, gamma + h), solver, mc).v
        down = price(deal, _with_hedger_basis(model, gamma - h), solver, mc).v
        return (up - down) / (2.0 * h)
    if method != "analytic-integral":
        raise ValueError(f"unknown method {method!r}")
    if solver == "closed-form":
        return _deposit_sensitivity(deal, base, quadrature_nodes)
    if solver == "mc":
        return _mc_sensitivity(deal, base, mc or McConfig())
    raise ValueError(f"analytic-integral sensitivity is not available for solver {solver!r}")


def sweep_gamma(
    deal: DealSpec,
    model: MarketModel,
    gammas,
    solver: str | None = None,
    mc: McConfig | None = None,
) -> list[tuple[float, float]]:
    """Investor-view value for each constant hedger basis in ``gammas``."""
    solver = solver or _default_solver(deal)
    return [
        (float(g), price(deal, _with_hedger_basis(model, float(g)), solver, mc).v) for g in gammas
    ]
