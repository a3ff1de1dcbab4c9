"""Command-line interface: ``repxva <command> <scenario> [flags]``.

Exit status: 0 on success, 2 for an invalid scenario or flag combination,
3 when a solver fails to converge, 4 when ``check`` finds a failing check and
1 for any other error.  Failures print a JSON error record on stderr (and
write ``error.json`` when ``--out`` is given).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml
from pydantic import ValidationError

from .agreement import deal_closes, sweep_gamma
from .closed_form import (
    deposit_params_from_model,
    price_deposit_const,
    price_deposit_time_varying,
)
from .curves import CoverageError
from .hedge import HedgeError, replication_pnl
from .instruments import DealKind
from .market_model import ModelError, time_grid
from .mc_pricer import PicardError, intensity_identity_checks, mc_price
from .pricing import SOLVERS, price
from .scenario import Scenario, load_scenario

EXIT_OK, EXIT_ERROR, EXIT_SCHEMA, EXIT_CONVERGENCE, EXIT_CHECK = 0, 1, 2, 3, 4


class CheckFailed(Exception):
    pass


def _fmt(x) -> str:
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        writer = csv.writer(buf, lineterminator="\n")
        header = list(rows[0])
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[k]) for k in header])
    return buf.getvalue()


def to_json(payload) -> str:
    return json.dumps(_jsonable(payload), indent=2) + "\n"


def _emit(args, tables: dict[str, list[dict]], primary: str) -> None:
    """Write every table to ``--out`` (if given) and print the primary one."""
    fmt = args.format
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, rows in tables.items():
            text = to_csv(rows) if fmt == "csv" else to_json(rows)
            (out / f"{name}.{fmt}").write_text(text)
    rows = tables[primary]
    sys.stdout.write(to_csv(rows) if fmt == "csv" else to_json(rows))


def _solver_for(args, scenario: Scenario) -> str:
    if args.solver:
        return args.solver
    return "closed-form" if scenario.deal.kind == "deposit" else "mc"


def cmd_price(args, scenario: Scenario) -> int:
    deal, model = scenario.build_deal(), scenario.build_model()
    solver = _solver_for(args, scenario)
    out = price(deal, model, solver, scenario.mc_config(args.seed), scenario.pde_grid())
    _emit(args, {"price": [out.as_row()]}, "price")
    return EXIT_OK


def cmd_hedge_sim(args, scenario: Scenario) -> int:
    deal, model = scenario.build_deal(), scenario.build_model()
    h = scenario.solver.hedge
    seed = scenario.seed if args.seed is None else args.seed
    rep = replication_pnl(deal, model, h.dt, h.n_paths, seed)
    paths = [{"path": i, "error": float(e)} for i, e in enumerate(rep.terminal_errors)]
    _emit(args, {"hedge_summary": [rep.summary()], "hedge_paths": paths}, "hedge_summary")
    return EXIT_OK


def cmd_agree(args, scenario: Scenario) -> int:
    g1 = args.gamma1 if args.gamma1 is not None else getattr(scenario.agreement, "gamma1", None)
    g2 = args.gamma2 if args.gamma2 is not None else getattr(scenario.agreement, "gamma2", None)
    if g1 is None or g2 is None:
        raise ValueError("agree needs gamma1 and gamma2 (flags or the scenario's agreement block)")
    deal, model = scenario.build_deal(), scenario.build_model()
    res = deal_closes(deal, model, g1, g2, args.solver, scenario.mc_config(args.seed))
    row = {"gamma1": g1, "gamma2": g2, "v1": res.v1, "v2_ask": res.v2_ask,
           "margin": res.margin, "closes": res.closes}
    _emit(args, {"agree": [row]}, "agree")
    return EXIT_OK


def cmd_sweep(args, scenario: Scenario) -> int:
    if args.steps < 2:
        raise ValueError("--steps must be >= 2")
    deal, model = scenario.build_deal(), scenario.build_model()
    gammas = np.linspace(args.start, args.stop, args.steps)
    solver = _solver_for(args, scenario)
    pts = sweep_gamma(deal, model, gammas, solver, scenario.mc_config(args.seed))
    _emit(args, {"sweep": [{"param": "gamma", "x": g, "value": v} for g, v in pts]}, "sweep")
    return EXIT_OK


def _run_checks(scenario: Scenario, seed: int) -> list[dict]:
    deal, model = scenario.build_deal(), scenario.build_model()
    cfg = scenario.mc_config(seed)
    rows = []

    def add(name, passed, value, reference, tolerance, detail=""):
        rows.append({"check": name, "passed": bool(passed), "value": float(value),
                     "reference": float(reference), "tolerance": float(tolerance), "detail": detail})

    grid = time_grid(deal.maturity, dt=cfg.dt)
    funcs = {"one": lambda s: np.ones_like(s), "s": lambda s: s, "exp_minus_s": lambda s: np.exp(-s)}
    checks = intensity_identity_checks(model, funcs, grid, cfg.n_paths, seed)
    for (party, label), r in checks.items():
        add(f"intensity_identity[{party},{label}]", r.passes(3.0), r.lhs, r.rhs,
            3.0 * r.se_diff, "3 standard errors")

    try:
        out = mc_price(deal, model, cfg)
        add("decomposition", True, out.v, out.v_c + out.fva + out.cva + out.dva,
            out.se_v_c + out.se_fva + out.se_cva + out.se_dva + 10 * cfg.picard_tol)
    except AssertionError as exc:
        add("decomposition", False, math.nan, math.nan, math.nan, str(exc))
        out = None

    if deal.kind is DealKind.DEPOSIT:
        try:
            params, _ = deposit_params_from_model(deal, model)
        except ValueError as exc:
            add("reduction_consistency", True, 0.0, 0.0, 0.0, f"skipped: {exc}")
        else:
            const = price_deposit_const(params)
            tv = price_deposit_time_varying(params)
            add("reduction_consistency", abs(tv - const) <= 1e-12 * abs(const), tv, const,
                1e-12 * abs(const), "relative 1e-12")
            if out is not None:
                cf = price(deal, model, "closed-form").v
                tol = 3.0 * out.se_v
                add("mc_vs_closed_form", abs(out.v - cf) <= tol, out.v, cf, tol, "3 standard errors")
    return rows


def cmd_check(args, scenario: Scenario) -> int:
    seed = scenario.seed if args.seed is None else args.seed
    rows = _run_checks(scenario, seed)
    _emit(args, {"check": rows}, "check")
    if not all(r["passed"] for r in rows):
        raise CheckFailed(", ".join(r["check"] for r in rows if not r["passed"]))
    return EXIT_OK


COMMANDS = {
    "price": cmd_price,
    "hedge-sim": cmd_hedge_sim,
    "agree": cmd_agree,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="repxva", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("scenario", help="scenario file (.yaml, .yml or .json)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--out", default=None, help="directory for output files")
        p.add_argument("--format", choices=("csv", "json"), default="csv")
        if name in ("price", "agree", "sweep"):
            p.add_argument("--solver", choices=SOLVERS, default=None)
        if name == "agree":
            p.add_argument("--gamma1", type=float, default=None)
            p.add_argument("--gamma2", type=float, default=None)
        if name == "sweep":
            p.add_argument("--param", choices=("gamma",), required=True)
            p.add_argument("--from", dest="start", type=float, required=True)
            p.add_argument("--to", dest="stop", type=float, required=True)
            p.add_argument("--steps", type=int, required=True)
    return parser


def _fail(args, code: int, kind: str, exc: BaseException) -> int:
    record = {"error": kind, "message": str(exc), "exit_code": code}
    field = getattr(exc, "field", None) or getattr(exc, "instrument", None)
    if field:
        record["field"] = field
    if isinstance(exc, ValidationError):
        record["details"] = [
            {"loc": ".".join(str(p) for p in e["loc"]), "msg": e["msg"]} for e in exc.errors()
        ]
    text = json.dumps(record, sort_keys=True)
    sys.stderr.write(text + "\n")
    if args is not None and getattr(args, "out", None):
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "error.json").write_text(text + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_SCHEMA if exc.code else EXIT_OK
    try:
        scenario = load_scenario(args.scenario)
        return COMMANDS[args.command](args, scenario)
    except (ValidationError, ModelError, CoverageError, HedgeError, yaml.YAMLError,
            json.JSONDecodeError, FileNotFoundError, ValueError) as exc:
        return _fail(args, EXIT_SCHEMA, "invalid-input", exc)
    except PicardError as exc:
        return _fail(args, EXIT_CONVERGENCE, "non-convergence", exc)
    except CheckFailed as exc:
        return _fail(args, EXIT_CHECK, "check-failed", exc)
    except Exception as exc:  # noqa: BLE001 - last-resort machine-readable record
        return _fail(args, EXIT_ERROR, type(exc).__name__, exc)


if __name__ == "__main__":
    sys.exit(main())
