"""Acceptance criteria, one PASS/FAIL line each (shown in the terminal summary)."""

import itertools
import math
import time

import numpy as np
import pytest

from repxva.agreement import deal_closes, dv_dgamma, sweep_gamma
from repxva.closed_form import (
    DepositParams,
    price_deposit_const,
    price_deposit_mp_zero_recovery,
    price_deposit_time_varying,
)
from repxva.hedge import replication_pnl
from repxva.instruments import DealSpec
from repxva.market_model import flat_model, time_grid
from repxva.mc_pricer import McConfig, ValuationBreakdown, intensity_identity_checks, mc_price
from repxva.pde_pricer import PdeGrid, convergence_order, pde_price

from conftest import deposit_model

N = 1.0
C = 0.02
T = 5.0


def _params(li, lh, g, r, horizon=T):
    return DepositParams(N, C, li, lh, r, g, horizon)


def test_1_closed_form_self_consistency(report):
    start = time.perf_counter()
    worst = 0.0
    for li, lh, g, r in itertools.product(
        (0.0, 0.01, 0.05), (0.0, 0.03, 0.1), (0.0, 0.005, 0.02), (0.0, 0.4)
    ):
        p = _params(li, lh, g, r)
        const = price_deposit_const(p)
        worst = max(worst, abs(price_deposit_time_varying(p) - const) / abs(const))
    elapsed = time.perf_counter() - start
    ok = worst <= 1e-12 and elapsed < 1.0
    report("1 closed-form self-consistency", ok,
           f"max rel diff {worst:.2e} (tol 1e-12) over 54 cases, {elapsed:.3f}s (< 1s)")
    assert ok


def test_2_mc_vs_closed_form(report):
    start = time.perf_counter()
    worst_z, worst_it = 0.0, 0
    cases = list(itertools.product((0.005, 0.02, 0.05), ((0.01, 0.0), (0.03, 0.005), (0.06, 0.02))))
    for k, (li, (lh, g)) in enumerate(cases):
        model = deposit_model(lam_i=li, lam_h=lh, gamma=g)
        out = mc_price(DealSpec("deposit", N, T), model,
                       McConfig(n_paths=200_000, dt=0.01, seed=100 + k, picard_tol=1e-8))
        cf = price_deposit_const(_params(li, lh, g, 0.4))
        worst_z = max(worst_z, abs(out.v - cf) / out.se_v)
        worst_it = max(worst_it, out.iterations)
    elapsed = time.perf_counter() - start
    ok = worst_z <= 3.0 and worst_it <= 10 and elapsed < 60.0
    report("2 MC vs closed form", ok,
           f"max |diff|/SE {worst_z:.2f} (<= 3) over {len(cases)} sets, "
           f"max Picard iterations {worst_it} (<= 10), {elapsed:.1f}s (< 60s)")
    assert ok


def test_3_pde_vs_closed_form(report):
    start = time.perf_counter()
    model = deposit_model(lam_i=0.01, lam_h=0.03, gamma=0.005)
    deal = DealSpec("deposit", N, T)
    cf = price_deposit_const(_params(0.01, 0.03, 0.005, 0.4))
    rel = abs(pde_price(deal, model, PdeGrid(200, 200)).value - cf) / cf
    errors = [pde_price(deal, model, PdeGrid(200, n)).value - cf for n in (25, 50, 100, 200)]
    orders = convergence_order(errors)
    elapsed = time.perf_counter() - start
    ok = rel <= 1e-6 and min(orders) >= 1.8 and elapsed < 10.0
    report("3 PDE vs closed form", ok,
           f"rel error {rel:.2e} (<= 1e-6), orders {', '.join(f'{o:.2f}' for o in orders)} "
           f"(>= 1.8), {elapsed:.2f}s (< 10s)")
    assert ok


def test_4_limits(report):
    start = time.perf_counter()
    g = 0.01
    a = price_deposit_const(_params(0.0, 0.0, g, 0.4))
    a_ref = N * math.exp(-(C + g) * T)
    ulps_a = abs(a - a_ref) / np.spacing(a_ref)
    b_p = _params(0.0, 0.03, 0.005, 0.0)
    b_diff = abs(price_deposit_const(b_p) - price_deposit_mp_zero_recovery(b_p)) / N
    c_diff = abs(price_deposit_const(_params(1e4, 0.01, 0.002, 0.4)) - N * math.exp(-C * T))
    elapsed = time.perf_counter() - start
    ok = ulps_a <= 4 and b_diff <= 1e-12 and c_diff <= 1e-6 * N and elapsed < 1.0
    report("4 limit checks", ok,
           f"(a) {ulps_a:.0f} ulp from N e^(-(c+g)T); (b) |diff| {b_diff:.1e} (<= 1e-12); "
           f"(c) |V - N e^(-cT)| {c_diff:.2e} (<= 1e-6 N); {elapsed:.3f}s")
    assert ok


def test_5_steady_state_riskless_borrower(report):
    start = time.perf_counter()
    model = flat_model(ois=C, hedger_spread=0.02, investor_spread=0.0,
                       hedger_recovery=0.4, investor_recovery=0.4, hedger_basis=0.0)
    # investor borrows N from the hedger and repays at maturity
    deal = DealSpec("deposit", N, T, direction=-1)
    out = mc_price(deal, model, McConfig(n_paths=200_000, dt=0.01, seed=32))
    target = -N * math.exp(-C * T)
    tol = 3 * out.se_v + 1e-12 * N
    elapsed = time.perf_counter() - start
    ok = (abs(out.v - target) <= tol and out.fva == 0.0 and out.cva == 0.0
          and out.dva == 0.0 and elapsed < 30.0)
    report("5 steady-state lending to riskless investor", ok,
           f"investor view v {out.v:.12f} vs {target:.12f}, hedger view {-out.v:.12f} "
           f"(tol {tol:.1e}), fva {out.fva}, cva {out.cva}, "
           f"dva {out.dva}, {elapsed:.1f}s (< 30s)")
    assert ok


def test_6_replication(report):
    start = time.perf_counter()
    model = deposit_model(lam_i=0.01, lam_h=0.03, gamma=0.005, spot_drift=0.06)
    deals = {
        "call": DealSpec("european_call", N, 1.0, strike=100.0),
        "deposit": DealSpec("deposit", N, 1.0),
    }
    details, ok = [], True
    for name, deal in deals.items():
        reps = [replication_pnl(deal, model, dt, 20_000, seed=7) for dt in (1 / 50, 1 / 100, 1 / 200)]
        jump = max(r.max_jump_residual for r in reps) / N
        events = sum(r.n_jump_events for r in reps)
        loads = all(r.loadings_pass(3.0) for r in reps)
        worst_t = max(float(np.max(np.abs(r.loadings) / r.loading_se)) for r in reps)
        ratios = [a.std_error / b.std_error for a, b in zip(reps[:-1], reps[1:])]
        scaling = all(math.sqrt(2) / 1.5 <= q <= math.sqrt(2) * 1.5 for q in ratios)
        ok &= jump <= 1e-10 and events > 0 and loads and scaling
        details.append(
            f"{name}: jump residual {jump:.1e} over {events} events, max |t| {worst_t:.2f}, "
            f"std ratios {', '.join(f'{q:.2f}' for q in ratios)} (sqrt2 within x1.5: "
            f"[{math.sqrt(2) / 1.5:.2f}, {math.sqrt(2) * 1.5:.2f}])"
        )
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120.0
    report("6 replication", ok, "; ".join(details) + f"; {elapsed:.1f}s (< 120s)")
    assert ok


def test_7_intensity_identity(report):
    start = time.perf_counter()
    model = flat_model(ois=C, hedger_spread=0.012, investor_spread=0.006,
                       hedger_recovery=0.4, investor_recovery=0.4,
                       hedger_spread_vol=0.01, investor_spread_vol=0.005)
    grid = time_grid(T, dt=0.05)
    funcs = {"1": lambda s: np.ones_like(s), "s": lambda s: s, "exp(-s)": lambda s: np.exp(-s)}
    checks = intensity_identity_checks(model, funcs, grid, 200_000, seed=77)
    ok = all(r.passes(3.0) for r in checks.values())
    worst = max(abs(r.lhs - r.rhs) / r.se_diff for r in checks.values())
    elapsed = time.perf_counter() - start
    ok &= elapsed < 30.0
    report("7 intensity identity", ok,
           f"max |lhs - rhs|/SE {worst:.2f} (<= 3) for f in {{1, s, exp(-s)}}, both parties, "
           f"200000 paths, {elapsed:.1f}s (< 30s)")
    assert ok


def test_8_agreement(report):
    start = time.perf_counter()
    model = deposit_model(lam_i=0.01, lam_h=0.03)
    deal = DealSpec("deposit", N, T)
    equal = deal_closes(deal, model, 0.007, 0.007)
    good = deal_closes(deal, model, 0.005, 0.01)
    bad = deal_closes(deal, model, 0.01, 0.005)
    a = dv_dgamma(deal, model, 0.005)
    fd = dv_dgamma(deal, model, 0.005, method="finite-difference")
    rel = abs(a - fd) / abs(fd)
    values = [v for _, v in sweep_gamma(deal, model, np.linspace(0.0, 0.02, 21))]
    monotone = all(b < a_ for a_, b in zip(values, values[1:])) and values[0] > 0
    elapsed = time.perf_counter() - start
    ok = (equal.closes and abs(equal.margin) <= 1e-12 and good.closes and not bad.closes
          and rel <= 1e-6 and monotone and elapsed < 10.0)
    report("8 agreement", ok,
           f"equal-basis margin {equal.margin:.1e}, (0.005, 0.01) closes={good.closes}, "
           f"(0.01, 0.005) closes={bad.closes}, dv/dgamma rel diff {rel:.1e} (<= 1e-6), "
           f"21-point sweep monotone={monotone}, {elapsed:.2f}s (< 10s)")
    assert ok


def test_9_decomposition_invariant(report):
    model = deposit_model()
    runs = [
        (DealSpec("deposit", N, T), McConfig(n_paths=4096, seed=1)),
        (DealSpec("deposit", N, T, direction=-1), McConfig(n_paths=4096, seed=2)),
        (DealSpec("european_call", N, 1.0, strike=100.0), McConfig(n_paths=4096, seed=3)),
        (DealSpec("european_call", N, 1.0, strike=100.0), McConfig(n_paths=4096, seed=3, mode="regression")),
    ]
    worst = max(abs(mc_price(d, model, cfg).residual) for d, cfg in runs)
    broken = ValuationBreakdown(v=1.0, v_c=0.9, fva=0.0, cva=0.0, dva=0.0)
    try:
        broken.check_decomposition()
        raised = False
    except AssertionError:
        raised = True
    ok = raised and worst <= 1e-10
    report("9 decomposition invariant", ok,
           f"max |v - (v_c + fva + cva + dva)| {worst:.1e} over {len(runs)} runs; "
           f"violation raises={raised}")
    assert ok
