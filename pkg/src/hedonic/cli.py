"""Command-line front end.

Subcommands: ``solve``, ``verify``, ``example``, ``range``, ``conjugate``.
Reports are JSON documents written to ``--out`` or stdout. Errors are
printed to stderr as ``{"error": {...}}`` with a nonzero exit code:
2 verification failed, 3 parse or validation error, 4 solver did not
converge, 5 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import dataclass

import numpy as np

from .dualsolve import DualOptions, minimize_dual
from .instance import NONE_D, NONE_S, InstanceError, MarketInstance, bid_ask, read_instance
from .oracle import (QuadraticExampleSpec, compare_to_analytic, demand_map, discretize_quadratic,
                     extract_solution, traded_price, TRADED_HI, TRADED_LO)
from .planner import solve_planner
from .uconvex import PriceSystem, argmax_sets, conjugate_profile
from .verify import quality_table, uniqueness_ranges, verify_equilibrium

__all__ = ["main", "build_parser", "RunConfig", "solve_instance", "EXIT_OK", "EXIT_VERIFY",
           "EXIT_PARSE", "EXIT_CONVERGENCE", "EXIT_IO"]

EXIT_OK = 0
EXIT_VERIFY = 2
EXIT_PARSE = 3
EXIT_CONVERGENCE = 4
EXIT_IO = 5

# below this grid size the analytic comparison is informational only
COARSE_GRID = 50


class CliError(Exception):
    def __init__(self, code: int, kind: str, message: str, path: str = ""):
        super().__init__(message)
        self.code = code
        self.kind = kind
        self.path = path


@dataclass(frozen=True)
class RunConfig:
    """Parsed command line. ``method`` is one of planner, dual, both."""

    command: str
    instance: str | None = None
    method: str = "planner"
    tol: float = 1e-6
    max_iters: int = 50_000
    grid: int = 400
    h: float | None = None
    c: float | None = None
    out: str | None = None
    trace: str | None = None
    seed: int | None = None
    prices: str | None = None
    allocation: str | None = None
    csv: str | None = None
    plot_dir: str | None = None

    @classmethod
    def from_args(cls, ns: argparse.Namespace) -> "RunConfig":
        fields = cls.__dataclass_fields__
        return cls(**{k: v for k, v in vars(ns).items() if k in fields})


# --- file formats ----------------------------------------------------------

def _read_json(path: str):
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise CliError(EXIT_IO, "io", str(exc), path) from exc
    try:
        return json.loads(raw.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError) as exc:
        raise CliError(EXIT_PARSE, "parse", f"{path}: {exc}", path) from exc


def _reject_constant(name):
    raise ValueError(f"non-finite literal {name}")


def _load_instance(path: str) -> MarketInstance:
    try:
        return read_instance(path)
    except InstanceError as exc:
        kind = "parse" if "parse failure" in str(exc) else "validation"
        raise CliError(EXIT_PARSE, kind, str(exc), exc.path) from exc
    except OSError as exc:
        raise CliError(EXIT_IO, "io", str(exc), path) from exc


def read_prices(inst: MarketInstance, path: str) -> PriceSystem:
    """Read ``{"prices": {quality_id: value, ...}}`` covering every base quality."""
    doc = _read_json(path)
    table = doc.get("prices") if isinstance(doc, dict) else None
    if not isinstance(table, dict):
        raise CliError(EXIT_PARSE, "validation", "prices: expected an object of quality id -> number", "prices")
    index = {q: k for k, q in enumerate(inst.quality_ids)}
    vals = np.full(inst.K + 2, np.nan)
    vals[-2:] = 0.0
    for q, v in table.items():
        where = f"prices.{q}"
        if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
            raise CliError(EXIT_PARSE, "validation", f"{where}: not a finite number", where)
        if q in (NONE_D, NONE_S):
            if v != 0:
                raise CliError(EXIT_PARSE, "validation", f"{where}: outside options are priced 0", where)
            continue
        if q not in index:
            raise CliError(EXIT_PARSE, "validation", f"{where}: unknown quality", where)
        vals[index[q]] = float(v)
    missing = [inst.quality_ids[k] for k in range(inst.K) if np.isnan(vals[k])]
    if missing:
        raise CliError(EXIT_PARSE, "validation", f"prices: missing {missing[0]}", "prices")
    return PriceSystem(vals)


def _read_masses(doc, key, agent_ids, qidx, rows):
    out = np.zeros((len(agent_ids), len(qidx)))
    aidx = {a: i for i, a in enumerate(agent_ids)}
    recs = doc.get(key, [])
    if not isinstance(recs, list):
        raise CliError(EXIT_PARSE, "validation", f"{key}: expected a list", key)
    for r, rec in enumerate(recs):
        where = f"{key}[{r}]"
        if not isinstance(rec, dict):
            raise CliError(EXIT_PARSE, "validation", f"{where}: expected an object", where)
        a, q, mass = rec.get("agent"), rec.get("quality"), rec.get("mass")
        if a not in aidx:
            raise CliError(EXIT_PARSE, "validation", f"{where}.agent: unknown {rows} {a!r}", where)
        if q not in qidx:
            raise CliError(EXIT_PARSE, "validation", f"{where}.quality: unknown quality {q!r}", where)
        if not isinstance(mass, (int, float)) or isinstance(mass, bool) or not math.isfinite(mass):
            raise CliError(EXIT_PARSE, "validation", f"{where}.mass: not a finite number", where)
        out[aidx[a], qidx[q]] += float(mass)
    return out


def read_allocation(inst: MarketInstance, path: str):
    """Read sparse ``alpha``/``beta`` records ``{"agent", "quality", "mass"}``."""
    doc = _read_json(path)
    if not isinstance(doc, dict):
        raise CliError(EXIT_PARSE, "validation", "allocation: expected an object", "allocation")
    qidx = {q: k for k, q in enumerate(inst.extended_ids())}
    alpha = _read_masses(doc, "alpha", inst.consumer_ids, qidx, "consumer")
    beta = _read_masses(doc, "beta", inst.producer_ids, qidx, "producer")
    return alpha, beta


def _sparse(mat: np.ndarray, agent_ids, qids) -> list:
    rows, cols = np.nonzero(mat)
    return [{"agent": agent_ids[i], "quality": qids[k], "mass": _num(mat[i, k])}
            for i, k in zip(rows, cols)]


def _num(x):
    x = float(x)
    return x if math.isfinite(x) else None


def _price_dict(inst: MarketInstance, p) -> dict:
    vals = p.values if isinstance(p, PriceSystem) else np.asarray(p, float)
    return {q: _num(vals[k]) for k, q in enumerate(inst.quality_ids)}


def _ranges(inst, p, alpha, beta, tol) -> list:
    rng = uniqueness_ranges(inst, p, alpha, beta, tol)
    return [{"quality": q, "lower": _num(rng.lower[k]), "upper": _num(rng.upper[k]),
             "traded": bool(rng.traded[k])} for k, q in enumerate(inst.quality_ids)]


def _emit(doc: dict, out: str | None):
    text = json.dumps(doc, indent=1, allow_nan=False) + "\n"
    if out is None:
        sys.stdout.write(text)
        return
    try:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    except OSError as exc:
        raise CliError(EXIT_IO, "io", str(exc), out) from exc


def _write_csv(path: str, header, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow(["" if x is None else (repr(x) if isinstance(x, float) else x) for x in row])
    except OSError as exc:
        raise CliError(EXIT_IO, "io", str(exc), path) from exc


# --- solving ---------------------------------------------------------------

def solve_instance(inst: MarketInstance, method: str = "planner", tol: float = 1e-6,
                   max_iters: int = 50_000, seed: int | None = None, trace: bool = False) -> dict:
    """Solve with the requested method and collect everything a report needs.

    ``planner`` uses the exact matching; ``dual`` takes prices from the
    dual descent and the allocation from the matching (any optimal
    allocation clears at any optimal price); ``both`` reports planner
    prices and cross-checks the dual optimum against the planner value.
    """
    if method not in ("planner", "dual", "both"):
        raise CliError(EXIT_PARSE, "validation", f"unknown method {method!r}", "method")
    plan = solve_planner(inst)
    res = {"planner_value": plan.value, "price": plan.price, "alpha": plan.allocation.alpha,
           "beta": plan.allocation.beta, "dual": None}
    if method in ("dual", "both"):
        st = minimize_dual(inst, DualOptions(max_iters=max_iters, tol=tol, trace=trace, seed=seed),
                           target=plan.value)
        res["dual"] = st
        if method == "dual":
            res["price"] = st.price
    return res


def _dual_doc(st) -> dict:
    return {"objective": st.objective, "iterations": st.iterations,
            "gap_estimate": st.gap_estimate, "converged": st.converged}


def cmd_solve(cfg: RunConfig) -> int:
    inst = _load_instance(cfg.instance)
    res = solve_instance(inst, cfg.method, cfg.tol, cfg.max_iters, cfg.seed, cfg.trace is not None)
    rep = verify_equilibrium(inst, res["price"], res["alpha"], res["beta"], cfg.tol)
    traded = bool(res["alpha"][:, : inst.K].sum() > 0)
    doc = {
        "command": "solve",
        "instance": cfg.instance,
        "method": cfg.method,
        "status": "equilibrium" if traded else "no-trade equilibrium",
        "passed": rep.passed,
        "report": rep.to_dict(),
        "planner_value": res["planner_value"],
        "prices": _price_dict(inst, res["price"]),
        "allocation": {
            "alpha": _sparse(res["alpha"], inst.consumer_ids, inst.extended_ids()),
            "beta": _sparse(res["beta"], inst.producer_ids, inst.extended_ids()),
        },
        "uniqueness_ranges": _ranges(inst, res["price"], res["alpha"], res["beta"], cfg.tol),
    }
    code = EXIT_OK if rep.passed else EXIT_VERIFY
    st = res["dual"]
    if st is not None:
        doc["dual"] = _dual_doc(st)
        gap = st.objective - res["planner_value"]
        doc["duality_gap"] = gap
        if cfg.trace:
            _write_csv(cfg.trace, ("iter", "objective", "gap", "step"),
                       [(int(i), float(o), float(g), float(s)) for i, o, g, s in st.trace])
        if not st.converged:
            code = EXIT_CONVERGENCE
        elif abs(gap) > cfg.tol * (1.0 + abs(res["planner_value"])):
            code = EXIT_VERIFY
    if cfg.csv:
        _write_csv(cfg.csv, ("quality", "a", "b", "p", "p_lower_env", "p_upper_env", "demand", "supply"),
                   quality_table(inst, res["price"], res["alpha"], res["beta"]))
    _emit(doc, cfg.out)
    return code


def cmd_verify(cfg: RunConfig) -> int:
    inst = _load_instance(cfg.instance)
    if not cfg.prices or not cfg.allocation:
        raise CliError(EXIT_PARSE, "validation", "verify needs --prices and --allocation", "args")
    p = read_prices(inst, cfg.prices)
    alpha, beta = read_allocation(inst, cfg.allocation)
    rep = verify_equilibrium(inst, p, alpha, beta, cfg.tol)
    doc = {"command": "verify", "instance": cfg.instance, "passed": rep.passed, "report": rep.to_dict()}
    if cfg.csv:
        _write_csv(cfg.csv, ("quality", "a", "b", "p", "p_lower_env", "p_upper_env", "demand", "supply"),
                   quality_table(inst, p, alpha, beta))
    _emit(doc, cfg.out)
    return EXIT_OK if rep.passed else EXIT_VERIFY


def cmd_range(cfg: RunConfig) -> int:
    inst = _load_instance(cfg.instance)
    if not cfg.prices:
        raise CliError(EXIT_PARSE, "validation", "range needs --prices", "args")
    p = read_prices(inst, cfg.prices)
    if cfg.allocation:
        alpha, beta = read_allocation(inst, cfg.allocation)
    else:
        alpha = np.zeros((inst.m, inst.K + 2))
        beta = np.zeros((inst.n, inst.K + 2))
    ranges = _ranges(inst, p, alpha, beta, cfg.tol)
    if not cfg.allocation:
        for r in ranges:
            r["traded"] = None
    ba = bid_ask(inst)
    for k, r in enumerate(ranges):
        r["a"], r["b"], r["p"] = _num(ba.ask[k]), _num(ba.bid[k]), _num(p.values[k])
    _emit({"command": "range", "instance": cfg.instance, "ranges": ranges}, cfg.out)
    return EXIT_OK


def cmd_conjugate(cfg: RunConfig) -> int:
    inst = _load_instance(cfg.instance)
    if not cfg.prices:
        raise CliError(EXIT_PARSE, "validation", "conjugate needs --prices", "args")
    p = read_prices(inst, cfg.prices)
    prof = conjugate_profile(inst, p)
    sets = argmax_sets(inst, p, cfg.tol)
    ext = inst.extended_ids()
    doc = {
        "command": "conjugate",
        "instance": cfg.instance,
        "consumers": [{"id": c, "sharp": _num(prof.sharp[i]), "activity": sets.consumer_activity[i],
                       "demand_set": [ext[k] for k in sets.demand_set(i)]}
                      for i, c in enumerate(inst.consumer_ids)],
        "producers": [{"id": c, "flat": _num(prof.flat[j]), "activity": sets.producer_activity[j],
                       "supply_set": [ext[k] for k in sets.supply_set(j)]}
                      for j, c in enumerate(inst.producer_ids)],
        "qualities": [{"id": q, "p": _num(p.values[k]), "sharp2": _num(prof.sharp2[k]),
                       "flat2": _num(prof.flat2[k])} for k, q in enumerate(ext)],
    }
    _emit(doc, cfg.out)
    return EXIT_OK


def cmd_example(cfg: RunConfig) -> int:
    try:
        spec = QuadraticExampleSpec(x_lo=1.0 if cfg.h is None else cfg.h, grid_n=cfg.grid,
                                    **({} if cfg.c is None else {"c": cfg.c}))
    except ValueError as exc:
        raise CliError(EXIT_PARSE, "validation", str(exc), "example") from exc
    inst = discretize_quadratic(spec)
    res = solve_instance(inst, cfg.method, cfg.tol, cfg.max_iters, cfg.seed, cfg.trace is not None)
    rep = verify_equilibrium(inst, res["price"], res["alpha"], res["beta"], cfg.tol)
    sol = extract_solution(spec, inst, res["price"], res["alpha"], res["beta"])
    dev = compare_to_analytic(spec, sol)
    step = dev.grid_step
    checks = {
        "endpoints": dev.endpoint_error <= 2 * step,
        "demand": dev.demand_error <= 2 * step,
        "c_hat": bool(dev.c_in_bounds),
        "price": dev.price_error <= 1e-2,
    }
    if spec.priced_out:
        checks["priced_out"] = dev.priced_out_fraction is not None and dev.priced_out_fraction >= 0.99
        checks["producers_active"] = dev.producers_active
    doc = {
        "command": "example",
        "grid": cfg.grid,
        "x_lo": spec.x_lo,
        "c_reference": spec.c,
        "method": cfg.method,
        "passed": rep.passed,
        "report": rep.to_dict(),
        "deviation": {k: (_num(v) if isinstance(v, float) else v) for k, v in dev.to_dict().items()},
        "thresholds": checks,
        "informational": cfg.grid < COARSE_GRID,
    }
    if res["dual"] is not None:
        doc["dual"] = _dual_doc(res["dual"])
    if cfg.plot_dir:
        _example_plots(cfg, spec, inst, res, sol, dev)
    _emit(doc, cfg.out)
    if not rep.passed:
        return EXIT_VERIFY
    if res["dual"] is not None and not res["dual"].converged:
        return EXIT_CONVERGENCE
    if cfg.grid >= COARSE_GRID and not all(checks.values()):
        return EXIT_VERIFY
    return EXIT_OK


def _example_plots(cfg, spec, inst, res, sol, dev):
    try:
        os.makedirs(cfg.plot_dir, exist_ok=True)
    except OSError as exc:
        raise CliError(EXIT_IO, "io", str(exc), cfg.plot_dir) from exc
    rng = uniqueness_ranges(inst, res["price"], res["alpha"], res["beta"])
    ba = bid_ask(inst)
    c = cfg.c if cfg.c is not None else dev.c_hat
    rows = []
    for k, z in enumerate(sol.z):
        ref = float(traded_price(z, c)) if TRADED_LO <= z <= TRADED_HI and math.isfinite(c) else None
        rows.append((float(z), float(ba.ask[k]), float(ba.bid[k]), float(sol.price[k]),
                     float(rng.lower[k]), float(rng.upper[k]), ref))
    _write_csv(os.path.join(cfg.plot_dir, "price.csv"),
               ("z", "a", "b", "p", "lower", "upper", "p_analytic"), rows)
    d_ref = demand_map(sol.x, spec)
    rows = [(float(x), float(d_ref[i]), _num(sol.demand[i])) for i, x in enumerate(sol.x)]
    _write_csv(os.path.join(cfg.plot_dir, "demand.csv"), ("x", "d_analytic", "d_solved"), rows)


# --- entry point -----------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hedonic", description="Hedonic market equilibrium solver.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, instance=True):
        if instance:
            p.add_argument("instance", help="instance file (JSON)")
        p.add_argument("--tol", type=float, default=1e-6)
        p.add_argument("--out", help="write the report here instead of stdout")

    def solver(p):
        p.add_argument("--method", choices=("planner", "dual", "both"), default="planner")
        p.add_argument("--max-iters", dest="max_iters", type=int, default=50_000)
        p.add_argument("--trace", help="CSV file for dual iteration rows")
        p.add_argument("--seed", type=int, default=None, help="random admissible start for the dual")

    p = sub.add_parser("solve", help="compute an equilibrium")
    common(p)
    solver(p)
    p.add_argument("--csv", help="per-quality CSV output")

    p = sub.add_parser("verify", help="check a price and allocation")
    common(p)
    p.add_argument("--prices", required=True)
    p.add_argument("--allocation", required=True)
    p.add_argument("--csv", help="per-quality CSV output")

    p = sub.add_parser("example", help="solve the closed-form quadratic market on a grid")
    common(p, instance=False)
    solver(p)
    p.add_argument("--grid", type=int, default=400)
    p.add_argument("--h", type=float, default=None, help="lower end of the consumer interval")
    p.add_argument("--c", type=float, default=None, help="price constant for the reference curve")
    p.add_argument("--plot-dir", dest="plot_dir", help="directory for plot-data CSV files")

    p = sub.add_parser("range", help="price ranges that keep an equilibrium intact")
    common(p)
    p.add_argument("--prices", required=True)
    p.add_argument("--allocation")

    p = sub.add_parser("conjugate", help="indirect utilities, envelopes and choice sets")
    common(p)
    p.add_argument("--prices", required=True)
    return ap


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "example": cmd_example,
            "range": cmd_range, "conjugate": cmd_conjugate}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PARSE
    cfg = RunConfig.from_args(ns)
    try:
        return COMMANDS[cfg.command](cfg)
    except CliError as exc:
        err = {"error": {"code": exc.code, "kind": exc.kind, "message": str(exc), "path": exc.path}}
        sys.stderr.write(json.dumps(err) + "\n")
        return exc.code


if __name__ == "__main__":
    sys.exit(main())
