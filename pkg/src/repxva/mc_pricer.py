"""Monte Carlo solution of the recursive pricing equation.

The value splits as ``v = v_c + fva + cva + dva``:

* ``v_c``: collateralized value, analytic.
* ``cva``: ``+(1-R_I) (V^C)^-`` at the investor's default when the investor
  defaults strictly first and before maturity, discounted at OIS.
* ``dva``: ``-(1-R_H) (V^C)^+`` at the hedger's default, mirrored.
* ``fva``: ``-E[int 1{both alive} D(0,s) gamma(s) V_s ds]``.  Because ``V_s``
  is the unknown itself the term is solved by Picard iteration.

Deterministic mode works with ``w(s) = E[1{both alive at s} V_s]``, a
deterministic function of time; since rates and basis are deterministic it
satisfies the linear Volterra equation::

    w(s) = b(s) - int_s^T D(s,u) gamma(u) w(u) du,
    b(s) = E[1{alive at s} (V^C_s + credit payments after s, discounted to s)]

exactly, so only time discretisation and sampling error remain.  Regression
mode replaces ``V_s`` by a per-node least-squares fit on the path state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Callable

import numpy as np

from .instruments import DealSpec, collateralized_value
from .market_model import RNG_BLOCK, MarketModel, PathSet, simulate_paths, time_grid


class PicardError(RuntimeError):
    """The fixed-point iteration did not converge."""

    def __init__(self, message: str, last: np.ndarray, previous: np.ndarray):
        super().__init__(message)
        self.last = last
        self.previous = previous


@dataclass(frozen=True)
class McConfig:
    n_paths: int = 100_000
    dt: float = 0.01
    nodes: tuple[float, ...] | None = None
    seed: int = 0
    picard_tol: float = 1e-8
    picard_max_iter: int = 50
    mode: str = "deterministic"
    degree: int = 2
    batch_size: int = 8 * RNG_BLOCK
    ridge: float = 1e-10

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if not self.picard_tol > 0.0:
            raise ValueError("picard_tol must be > 0")
        if self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be >= 1")
        if self.mode not in ("deterministic", "regression"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.batch_size < 1 or self.batch_size % RNG_BLOCK:
            raise ValueError(f"batch_size must be a positive multiple of {RNG_BLOCK}")
        if self.degree < 1:
            raise ValueError("degree must be >= 1")

    def grid(self, maturity: float) -> np.ndarray:
        if self.nodes is not None:
            g = np.asarray(self.nodes, dtype=float)
            if g[0] != 0.0 or abs(g[-1] - maturity) > 1e-12:
                raise ValueError("grid nodes must run from 0 to the deal maturity")
            return g
        return time_grid(maturity, dt=self.dt)


@dataclass
class ValuationBreakdown:
    v: float
    v_c: float
    fva: float
    cva: float
    dva: float
    se_v: float = 0.0
    se_v_c: float = 0.0
    se_fva: float = 0.0
    se_cva: float = 0.0
    se_dva: float = 0.0
    iterations: int = 0
    converged: bool = True
    solver: str = "mc"
    picard_steps: list[float] = field(default_factory=list, repr=False)
    # deterministic mode: grid and w(t) = E[1{both alive at t} V_t]
    profile: dict | None = field(default=None, repr=False)

    @property
    def residual(self) -> float:
        return self.v - (self.v_c + self.fva + self.cva + self.dva)

    def check_decomposition(self, tol: float = 1e-10) -> None:
        bound = self.se_v_c + self.se_fva + self.se_cva + self.se_dva + tol * max(1.0, abs(self.v))
        if abs(self.residual) > bound:
            raise AssertionError(
                f"v - (v_c + fva + cva + dva) = {self.residual:.3e} exceeds {bound:.3e}"
            )

    def as_row(self) -> dict:
        return {
            "v": self.v,
            "v_c": self.v_c,
            "fva": self.fva,
            "cva": self.cva,
            "dva": self.dva,
            "se_v": self.se_v,
            "se_v_c": self.se_v_c,
            "se_fva": self.se_fva,
            "se_cva": self.se_cva,
            "se_dva": self.se_dva,
            "solver": self.solver,
            "iterations": self.iterations,
            "converged": self.converged,
        }


def trapezoid_tail_weights(grid: np.ndarray) -> np.ndarray:
    """``W[i, j]``: trapezoid weight of node ``j`` in an integral over ``[t_i, T]``."""
    m = len(grid)
    dt = np.diff(grid)
    W = np.zeros((m, m))
    for i in range(m - 1):
        W[i, i] = 0.5 * dt[i]
        W[i, i + 1 : m - 1] = 0.5 * (dt[i:-1] + dt[i + 1 :])
        W[i, m - 1] = 0.5 * dt[-1]
    return W


def fva_kernel(model: MarketModel, grid: np.ndarray) -> np.ndarray:
    """``K[i, j] = W[i, j] D(t_i, t_j) gamma(t_j)`` for the discretised FVA integral."""
    cum = model.curves.ois.cumulative(grid)
    disc = np.exp(-(cum[None, :] - cum[:, None]))
    gamma = np.asarray(model.hedger.basis(grid), dtype=float)
    return np.triu(trapezoid_tail_weights(grid) * disc * gamma[None, :])


def picard_solve(b: np.ndarray, K: np.ndarray, tol: float, max_iter: int):
    """Iterate ``w <- b - K w`` from ``w = b``; returns ``(w, iterations, steps)``."""
    w = b.copy()
    steps = []
    for it in range(1, max_iter + 1):
        w_new = b - K @ w
        scale = max(np.max(np.abs(w_new)), np.finfo(float).tiny)
        step = float(np.max(np.abs(w_new - w)) / scale)
        steps.append(step)
        w_prev, w = w, w_new
        if step <= tol:
            return w, it, steps
    raise PicardError(
        f"Picard iteration did not reach tol {tol:g} in {max_iter} iterations "
        f"(last relative step {steps[-1]:.3e})",
        w,
        w_prev,
    )


def first_default_flags(paths: PathSet) -> tuple[np.ndarray, np.ndarray]:
    """Per path: investor defaults strictly first before maturity, and the mirror.

    Defaults on the same grid node count for neither party.
    """
    m = len(paths.times)
    inv_first = (paths.investor_index < paths.hedger_index) & (paths.investor_index < m)
    hed_first = (paths.hedger_index < paths.investor_index) & (paths.hedger_index < m)
    return inv_first, hed_first


class _PathValues:
    """Per-path ingredients of one simulated batch.

    A path is alive at node ``i`` while ``i < first`` (the earlier default
    index), so sums over alive nodes reduce to prefix sums whenever ``V^C``
    does not depend on the path.
    """

    def __init__(self, deal: DealSpec, model: MarketModel, paths: PathSet, disc0: np.ndarray):
        grid = paths.times
        m = len(grid)
        self.m = m
        self.disc0 = disc0
        vol = model.underlying.vol
        if paths.spot is None:
            self.vc_nodes = collateralized_value(deal, model.curves, None, vol, grid).v_c
            self.vc = None
        else:
            self.vc_nodes = None
            self.vc = collateralized_value(deal, model.curves, paths.spot, vol, grid[None, :]).v_c

        inv_first, hed_first = first_default_flags(paths)
        idx_i = np.minimum(paths.investor_index, m - 1)
        idx_h = np.minimum(paths.hedger_index, m - 1)
        vc_at_i = self._vc_at(idx_i)
        vc_at_h = self._vc_at(idx_h)
        # credit payments discounted to time 0
        self.cva = np.where(
            inv_first, model.investor.lgd * np.maximum(-vc_at_i, 0.0) * disc0[idx_i], 0.0
        )
        self.dva = np.where(
            hed_first, -model.hedger.lgd * np.maximum(vc_at_h, 0.0) * disc0[idx_h], 0.0
        )
        self.credit0 = self.cva + self.dva
        self.first = np.minimum(paths.investor_index, paths.hedger_index)
        self.paths = paths

    def _vc_at(self, idx: np.ndarray) -> np.ndarray:
        if self.vc is None:
            return self.vc_nodes[idx]
        return self.vc[np.arange(len(idx)), idx]

    @property
    def b0(self) -> np.ndarray:
        vc0 = self.vc_nodes[0] if self.vc is None else self.vc[:, 0]
        return vc0 + self.credit0

    def alive(self) -> np.ndarray:
        return self.first[:, None] > np.arange(self.m)[None, :]

    def b_matrix(self) -> np.ndarray:
        """``b_p(t_i) = 1{alive} (V^C(t_i) + credit discounted to t_i)``."""
        vc = self.vc if self.vc is not None else self.vc_nodes[None, :]
        return np.where(self.alive(), vc + self.credit0[:, None] / self.disc0[None, :], 0.0)

    def _alive_prefix(self, x: np.ndarray) -> np.ndarray:
        """Per path ``sum_{i < first} x_i`` for a node vector ``x``."""
        prefix = np.concatenate([[0.0], np.cumsum(x)])
        return prefix[np.minimum(self.first, self.m)]

    def b_sum(self) -> np.ndarray:
        """Sum over paths of ``b_p`` at each node."""
        m = self.m
        # number of paths (and credit mass) still alive at node i: first > i
        counts = np.bincount(self.first, minlength=m + 1)[: m + 1]
        credit = np.bincount(self.first, weights=self.credit0, minlength=m + 1)[: m + 1]
        alive_count = np.cumsum(counts[::-1])[::-1][1:]
        alive_credit = np.cumsum(credit[::-1])[::-1][1:]
        if self.vc is None:
            vc_sum = self.vc_nodes * alive_count
        else:
            vc_sum = np.where(self.alive(), self.vc, 0.0).sum(axis=0)
        return vc_sum + alive_credit / self.disc0

    def b_dot(self, ell: np.ndarray) -> np.ndarray:
        """Per path ``b_p . ell``."""
        credit_part = self.credit0 * self._alive_prefix(ell / self.disc0)
        if self.vc is None:
            return self._alive_prefix(self.vc_nodes * ell) + credit_part
        return np.where(self.alive(), self.vc, 0.0) @ ell + credit_part


def _batches(n_paths: int, batch_size: int):
    start = 0
    while start < n_paths:
        n = min(batch_size, n_paths - start)
        yield start, n
        start += n


def mc_price(deal: DealSpec, model: MarketModel, cfg: McConfig) -> ValuationBreakdown:
    """Price ``deal`` by Monte Carlo; see the module docstring for the scheme."""
    grid = cfg.grid(deal.maturity)
    if grid[-1] > model.horizon + 1e-12:
        raise ValueError(f"deal maturity {deal.maturity} beyond model horizon {model.horizon}")
    disc0 = np.exp(-model.curves.ois.cumulative(grid))
    K = fva_kernel(model, grid)
    if cfg.mode == "regression":
        out = _price_regression(deal, model, cfg, grid, disc0, K)
    else:
        out = _price_deterministic(deal, model, cfg, grid, disc0, K)
    out.check_decomposition(tol=max(10 * cfg.picard_tol, 1e-12))
    return out


def _fva_adjoint(K: np.ndarray) -> np.ndarray:
    """Weights ``l`` with ``fva = l . b`` for ``w = (I + K)^{-1} b``, ``fva = -(K w)_0``."""
    m = K.shape[0]
    return np.linalg.solve((np.eye(m) + K).T, -K[0])


def _price_deterministic(deal, model, cfg, grid, disc0, K) -> ValuationBreakdown:
    m = len(grid)
    ell = _fva_adjoint(K)
    sum_b = np.zeros(m)
    # running sums for per-path totals, in batch order (deterministic)
    sums = {k: 0.0 for k in ("cva", "dva", "fva", "v")}
    sq = {k: 0.0 for k in sums}
    v_c0 = None
    for start, n in _batches(cfg.n_paths, cfg.batch_size):
        paths = simulate_paths(
            model, grid, n, cfg.seed, start=start, underlying=deal.depends_on_underlying
        )
        pv = _PathValues(deal, model, paths, disc0)
        v_c0 = float(pv.b0[0] - pv.credit0[0])
        sum_b += pv.b_sum()
        fva_p = pv.b_dot(ell)
        per_path = {"cva": pv.cva, "dva": pv.dva, "fva": fva_p, "v": pv.b0 + fva_p}
        for k, x in per_path.items():
            sums[k] += float(np.sum(x))
            sq[k] += float(np.sum(x * x))

    n = cfg.n_paths
    b_mean = sum_b / n
    w, iterations, steps = picard_solve(b_mean, K, cfg.picard_tol, cfg.picard_max_iter)
    fva = 0.0 - float(K[0] @ w)

    def se(k):
        if n < 2:
            return 0.0
        mean = sums[k] / n
        var = max(sq[k] / n - mean * mean, 0.0) * n / (n - 1)
        return math.sqrt(var / n)

    return ValuationBreakdown(
        v=float(w[0]),
        v_c=v_c0,
        fva=fva,
        cva=sums["cva"] / n,
        dva=sums["dva"] / n,
        se_v=se("v"),
        se_fva=se("fva"),
        se_cva=se("cva"),
        se_dva=se("dva"),
        iterations=iterations,
        converged=True,
        solver="mc",
        picard_steps=steps,
        profile={"grid": grid, "w": w, "b": b_mean},
    )


def _basis_matrix(features: list[np.ndarray], degree: int) -> np.ndarray:
    """Standardised monomials of total degree <= ``degree``; constant columns dropped."""
    cols = [np.ones(len(features[0]) if features else 0)]
    z = []
    for f in features:
        sd = f.std()
        if sd > 0.0:
            z.append((f - f.mean()) / sd)
    for d in range(1, degree + 1):
        for combo in combinations_with_replacement(range(len(z)), d):
            col = np.ones_like(z[0])
            for j in combo:
                col = col * z[j]
            cols.append(col)
    return np.column_stack(cols)


def _regress(X: np.ndarray, y: np.ndarray, ridge: float) -> np.ndarray:
    A = X.T @ X
    A[np.diag_indices_from(A)] += ridge * max(1.0, np.trace(A) / A.shape[0])
    coef = np.linalg.solve(A, X.T @ y)
    return X @ coef


def _price_regression(deal, model, cfg, grid, disc0, K) -> ValuationBreakdown:
    m = len(grid)
    if cfg.n_paths * m > 40_000_000:
        raise ValueError("regression mode keeps all paths in memory; reduce n_paths or nodes")
    paths = simulate_paths(
        model, grid, cfg.n_paths, cfg.seed, underlying=deal.depends_on_underlying
    )
    pv = _PathValues(deal, model, paths, disc0)
    alive = pv.alive()
    b = pv.b_matrix()
    n = cfg.n_paths

    designs = []
    for i in range(m):
        rows = alive[:, i]
        feats = [paths.investor_spread[rows, i], paths.hedger_spread[rows, i]]
        if paths.spot is not None:
            feats.insert(0, paths.spot[rows, i])
        designs.append((rows, _basis_matrix(feats, cfg.degree) if rows.any() else None))

    def fit(y: np.ndarray) -> np.ndarray:
        out = np.zeros_like(y)
        for i, (rows, X) in enumerate(designs):
            if X is not None:
                out[rows, i] = _regress(X, y[rows, i], cfg.ridge)
        return out

    v_hat = fit(b)
    steps = []
    iterations = 0
    converged = False
    prev_mean = v_hat.mean(axis=0)
    for it in range(1, cfg.picard_max_iter + 1):
        y = np.where(alive, b - (v_hat @ K.T), 0.0)
        v_hat = fit(y)
        cur_mean = v_hat.mean(axis=0)
        scale = max(np.max(np.abs(cur_mean)), np.finfo(float).tiny)
        step = float(np.max(np.abs(cur_mean - prev_mean)) / scale)
        steps.append(step)
        iterations = it
        if step <= cfg.picard_tol:
            converged = True
            break
        prev_mean = cur_mean
    if not converged:
        raise PicardError(
            f"regression Picard iteration did not reach tol {cfg.picard_tol:g}",
            cur_mean,
            prev_mean,
        )

    fva_p = -(v_hat @ K[0])
    v_p = b[:, 0] + fva_p

    def se(x):
        return float(x.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    return ValuationBreakdown(
        v=float(v_p.mean()),
        v_c=float(pv.b0[0] - pv.credit0[0]),
        fva=float(fva_p.mean()),
        cva=float(pv.cva.mean()),
        dva=float(pv.dva.mean()),
        se_v=se(v_p),
        se_fva=se(fva_p),
        se_cva=se(pv.cva),
        se_dva=se(pv.dva),
        iterations=iterations,
        converged=True,
        solver="mc-regression",
        picard_steps=steps,
    )


@dataclass(frozen=True)
class IdentityCheck:
    lhs: float
    rhs: float
    se_lhs: float
    se_rhs: float
    se_diff: float

    def passes(self, n_se: float = 3.0) -> bool:
        return abs(self.lhs - self.rhs) <= n_se * self.se_diff + 1e-15


def intensity_identity_checks(
    model: MarketModel,
    funcs: dict[str, Callable[[np.ndarray], np.ndarray]],
    grid,
    n_paths: int,
    seed: int,
    parties: tuple[str, ...] = ("hedger", "investor"),
    batch_size: int = 16 * RNG_BLOCK,
) -> dict[tuple[str, str], IdentityCheck]:
    """Estimate ``E[int 1{tau>s} lambda_s f(s) ds]`` and ``E[int f(s) dN_s]``.

    All ``(party, f)`` pairs share one set of paths; the result is keyed by
    ``(party, name)``.  The survival indicator is taken at the left node of
    each step and ``lambda f`` is integrated with trapezoid weights.
    """
    grid = np.asarray(grid, dtype=float)
    m = len(grid)
    fv = {k: np.broadcast_to(np.asarray(f(grid), dtype=float), (m,)) for k, f in funcs.items()}
    dt = np.diff(grid)
    keys = [(p, k) for p in parties for k in funcs]
    acc = {key: np.zeros(3) for key in keys}
    acc_sq = {key: np.zeros(3) for key in keys}
    for start, n in _batches(n_paths, batch_size):
        paths = simulate_paths(model, grid, n, seed, start=start, underlying=False)
        for party in parties:
            spread = paths.hedger_spread if party == "hedger" else paths.investor_spread
            index = paths.hedger_index if party == "hedger" else paths.investor_index
            lam = model.party(party).intensity(spread)
            alive_left = index[:, None] > np.arange(m - 1)[None, :]
            lam_mid = alive_left * 0.5 * dt
            for name, f in fv.items():
                lam_f = lam * f
                lhs = np.sum(lam_mid * (lam_f[:, 1:] + lam_f[:, :-1]), axis=1)
                rhs = np.where(index < m, f[np.minimum(index, m - 1)], 0.0)
                for k, x in enumerate((lhs, rhs, lhs - rhs)):
                    acc[party, name][k] += x.sum()
                    acc_sq[party, name][k] += (x * x).sum()
    out = {}
    for key in keys:
        mean = acc[key] / n_paths
        var = np.maximum(acc_sq[key] / n_paths - mean**2, 0.0) * n_paths / max(n_paths - 1, 1)
        se = np.sqrt(var / n_paths)
        out[key] = IdentityCheck(float(mean[0]), float(mean[1]), float(se[0]), float(se[1]), float(se[2]))
    return out


def intensity_identity_check(
    model: MarketModel,
    f: Callable[[np.ndarray], np.ndarray],
    grid,
    n_paths: int,
    seed: int,
    party: str = "hedger",
    batch_size: int = 16 * RNG_BLOCK,
) -> IdentityCheck:
    """Single-function, single-party form of :func:`intensity_identity_checks`."""
    return intensity_identity_checks(model, {"f": f}, grid, n_paths, seed, (party,), batch_size)[
        party, "f"
    ]
