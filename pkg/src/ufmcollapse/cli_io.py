"""Command-line interface: solve, sweep, threshold, asymptotic, validate.

Configuration is an INI-style file with sections ``[problem]``, ``[reg]``,
``[solver]``, ``[sweep]``, ``[asymptotic]``, ``[validate]`` and
``[output]``, or the same structure as a JSON object. Every run writes
``results.csv`` and ``summary.json`` (deterministic) plus
``metadata.json`` (timestamps and wall times).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import json
import math
import os
import platform
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional

import numpy as np

from . import validation
from .core_model import ProblemSpec, RegParams, kkt_residual, reduced_objective
from .cvx_solver import FULL_SIZE_CAP, SolverOptions, solve_full, solve_reduced
from .diagnostics import (
    asymptotic_sweep,
    convergence_slope,
    etf_deviation,
    fit_block_structure,
    nc1_metric,
    rank_profile,
)
from .errors import InvalidArgumentError, NumericError
from .thresholds import collapse_lambdas, lambda_star_bias_free, minority_collapse_ratio
from .two_cluster import TwoClusterSpec, classify_and_solve

SCHEMA_VERSION = 1
EXIT_OK, EXIT_VALIDATION, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3
SWEEP_AXES = ("lambda_Z", "lambda_b", "n_A", "N")

_KEYS = {
    "problem": {"class_sizes", "k_A", "k_B", "n_A", "n_B"},
    "reg": {"lambda_Z", "lambda_b", "lambda_W", "lambda_H"},
    "solver": {"max_iterations", "objective_tol", "kkt_tol", "initial_step",
               "backtracking_factor", "restart", "full", "full_cap"},
    "sweep": {"axis", "min", "max", "steps", "spacing", "refine_tol", "route"},
    "asymptotic": {"r", "lambda", "lambda_b", "N_grid", "k_A", "k_B"},
    "validate": {"instances"},
    "output": {"dir"},
}


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------- config

@dataclass(frozen=True)
class SweepAxis:
    axis: str
    lo: float
    hi: float
    steps: int
    spacing: str = "linear"
    refine_tol: float = 1e-6
    route: str = "auto"

    def grid(self) -> list:
        if self.spacing == "log":
            vals = np.geomspace(self.lo, self.hi, self.steps)
        else:
            vals = np.linspace(self.lo, self.hi, self.steps)
        if self.axis in ("n_A", "N"):
            vals = np.unique(np.round(vals))
        return [float(v) for v in vals]


@dataclass(frozen=True)
class RunConfig:
    problem: dict
    reg: dict
    solver: SolverOptions = SolverOptions()
    solve_full: bool = False
    full_cap: int = FULL_SIZE_CAP
    sweep: Optional[SweepAxis] = None
    asymptotic: dict = field(default_factory=dict)
    validate_instances: int = 5
    out_dir: Optional[str] = None

    def two_cluster(self) -> Optional[TwoClusterSpec]:
        p = self.problem
        try:
            if {"k_A", "k_B", "n_A", "n_B"} <= p.keys():
                return TwoClusterSpec(int(p["k_A"]), int(p["k_B"]), p["n_A"], p["n_B"])
            if "class_sizes" in p:
                groups = ProblemSpec(tuple(p["class_sizes"])).clusters
                if len(groups) == 2 and all(g.size >= 2 for g in groups):
                    sizes = sorted(p["class_sizes"], reverse=True)
                    return TwoClusterSpec(groups[0].size, groups[1].size, sizes[0], sizes[-1])
        except InvalidArgumentError:
            return None
        return None

    def problem_spec(self) -> ProblemSpec:
        tc = self.two_cluster()
        if "class_sizes" in self.problem:
            return ProblemSpec(tuple(self.problem["class_sizes"]))
        if tc is None:
            raise ConfigError("[problem] needs class_sizes or all of k_A, k_B, n_A, n_B")
        return tc.to_problem()

    def reg_params(self) -> RegParams:
        r = self.reg
        if "lambda_W" in r or "lambda_H" in r:
            if "lambda_W" not in r or "lambda_H" not in r:
                raise ConfigError("[reg] lambda_W and lambda_H must be given together")
            return RegParams.from_factors(r["lambda_W"], r["lambda_H"], r.get("lambda_b", math.inf))
        if "lambda_Z" not in r:
            raise ConfigError("[reg] lambda_Z is required")
        return RegParams(r["lambda_Z"], r.get("lambda_b", math.inf))


def _num(section, key, value, integer=False):
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"[{section}] {key}: expected a number, got {value!r}") from None
    if math.isnan(v):
        raise ConfigError(f"[{section}] {key}: NaN is not allowed")
    if integer:
        if not v.is_integer():
            raise ConfigError(f"[{section}] {key}: expected an integer, got {value!r}")
        return int(v)
    return v


def _bool(section, key, value):
    if isinstance(value, bool):
        return value
    s = str(value).strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"[{section}] {key}: expected a boolean, got {value!r}")


def _list(section, key, value):
    items = value if isinstance(value, list) else [s for s in str(value).replace(";", ",").split(",") if s.strip()]
    if not items:
        raise ConfigError(f"[{section}] {key}: empty list")
    return [_num(section, key, s) for s in items]


def _read_raw(path: Path) -> dict:
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if path.suffix == ".json" or text.lstrip().startswith("{"):
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        if not isinstance(raw, dict) or not all(isinstance(v, dict) for v in raw.values()):
            raise ConfigError(f"{path}: top level must map section names to objects")
        return raw
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    cp.optionxform = str  # keys are case sensitive (lambda_Z)
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    return {s: dict(cp.items(s)) for s in cp.sections()}


def parse_config(path, bias_free: bool = False) -> RunConfig:
    raw = _read_raw(Path(path))
    for sec, items in raw.items():
        if sec not in _KEYS:
            raise ConfigError(f"unknown section [{sec}]")
        for key in items:
            if key not in _KEYS[sec]:
                raise ConfigError(f"[{sec}] unknown key {key!r}")
    prob = {}
    P = raw.get("problem", {})
    if "class_sizes" in P:
        prob["class_sizes"] = _list("problem", "class_sizes", P["class_sizes"])
    for k in ("k_A", "k_B"):
        if k in P:
            prob[k] = _num("problem", k, P[k], integer=True)
    for k in ("n_A", "n_B"):
        if k in P:
            prob[k] = _num("problem", k, P[k])
    reg = {k: _num("reg", k, v) for k, v in raw.get("reg", {}).items()}
    if bias_free:
        reg["lambda_b"] = math.inf
    S = raw.get("solver", {})
    opts = {}
    for k in ("max_iterations",):
        if k in S:
            opts[k] = _num("solver", k, S[k], integer=True)
    for k in ("objective_tol", "kkt_tol", "initial_step", "backtracking_factor"):
        if k in S:
            opts[k] = _num("solver", k, S[k])
    if "restart" in S:
        opts["restart"] = _bool("solver", "restart", S["restart"])
    try:
        solver = SolverOptions(**opts)
    except InvalidArgumentError as exc:
        raise ConfigError(f"[solver] {exc}") from None
    sweep = None
    W = raw.get("sweep")
    if W:
        axis = str(W.get("axis", "")).strip()
        if axis not in SWEEP_AXES:
            raise ConfigError(f"[sweep] axis: must be one of {', '.join(SWEEP_AXES)}, got {axis!r}")
        for k in ("min", "max", "steps"):
            if k not in W:
                raise ConfigError(f"[sweep] {k}: missing")
        steps = _num("sweep", "steps", W["steps"], integer=True)
        lo, hi = _num("sweep", "min", W["min"]), _num("sweep", "max", W["max"])
        if steps < 2 or not lo < hi:
            raise ConfigError(f"[sweep] steps/min/max: empty grid (steps={steps}, min={lo}, max={hi})")
        spacing = str(W.get("spacing", "linear")).strip()
        if spacing not in ("linear", "log"):
            raise ConfigError(f"[sweep] spacing: must be linear or log, got {spacing!r}")
        if spacing == "log" and lo <= 0:
            raise ConfigError("[sweep] min: log spacing needs a positive minimum")
        route = str(W.get("route", "auto")).strip()
        if route not in ("auto", "analytic", "numeric"):
            raise ConfigError(f"[sweep] route: must be auto, analytic or numeric, got {route!r}")
        sweep = SweepAxis(axis, lo, hi, steps, spacing,
                          _num("sweep", "refine_tol", W.get("refine_tol", 1e-6)), route)
    A = raw.get("asymptotic", {})
    asym = {}
    for k in ("r", "lambda", "lambda_b"):
        if k in A:
            asym[k] = _num("asymptotic", k, A[k])
    for k in ("k_A", "k_B"):
        if k in A:
            asym[k] = _num("asymptotic", k, A[k], integer=True)
    if "N_grid" in A:
        asym["N_grid"] = _list("asymptotic", "N_grid", A["N_grid"])
    if bias_free:
        asym["lambda_b"] = math.inf
    V = raw.get("validate", {})
    inst = _num("validate", "instances", V.get("instances", 5), integer=True)
    out = raw.get("output", {}).get("dir")
    full = _bool("solver", "full", S.get("full", False))
    cap = _num("solver", "full_cap", S.get("full_cap", FULL_SIZE_CAP), integer=True)
    cfg = RunConfig(prob, reg, solver, full, cap, sweep, asym, inst, out)
    return cfg


# ---------------------------------------------------------------- output

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.12g}"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if hasattr(v, "value"):
        return v.value
    return v


class RunWriter:
    """Single writer for one run's output files."""

    def __init__(self, command: str, out_dir: Path):
        self.command = command
        self.out = out_dir
        self.started = datetime.now(timezone.utc)
        self.t0 = time.perf_counter()
        self.timings = {}

    def write(self, columns, rows, summary: dict, extra_meta: Optional[dict] = None):
        self.out.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
        (self.out / "results.csv").write_text(buf.getvalue())
        body = {"schema_version": SCHEMA_VERSION, "command": self.command, **summary}
        (self.out / "summary.json").write_text(json.dumps(_jsonable(body), indent=2) + "\n")
        meta = {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "started_utc": self.started.isoformat(),
            "finished_utc": datetime.now(timezone.utc).isoformat(),
            "wall_seconds": time.perf_counter() - self.t0,
            "record_wall_seconds": self.timings,
            "python": platform.python_version(),
            "numpy": np.__version__,
            **(extra_meta or {}),
        }
        (self.out / "metadata.json").write_text(json.dumps(_jsonable(meta), indent=2) + "\n")


# ---------------------------------------------------------------- records

def _kkt_dict(k):
    return {"stationarity": k.stationarity, "feasibility_margin": k.feasibility_margin,
            "bias_residual": k.bias_residual}


def _record(route, mp, spec: ProblemSpec, reg: RegParams, tc, regime, objective, kkt, extra=None):
    fit = fit_block_structure(mp, spec)
    rec = {
        "route": route,
        "regime": regime,
        "objective": objective,
        **_kkt_dict(kkt),
        "etf_deviation": etf_deviation(mp.Zbar),
        "block_residual": fit.residual,
    }
    if tc is not None:
        rA, rB, guess = rank_profile(mp, tc)
        co = fit.two_cluster
        rec.update({"a": co.a, "b": co.b, "c": co.c, "d": co.d, "m": co.m,
                    "rank_A": rA, "rank_B": rB, "rank_regime": guess.value if guess else None})
        if regime is None:
            rec["regime"] = guess.value if guess else "Unclassified"
    rec.update(extra or {})
    return rec


SOLVE_COLUMNS = ["route", "regime", "a", "b", "c", "d", "m", "objective", "stationarity",
                 "feasibility_margin", "bias_residual", "etf_deviation", "rank_A", "rank_B",
                 "block_residual", "iterations", "converged", "nc1", "within_class_spread"]


def cmd_solve(cfg: RunConfig, out: Path) -> int:
    spec, reg, tc = cfg.problem_spec(), cfg.reg_params(), cfg.two_cluster()
    writer = RunWriter("solve", out)
    records = []
    status = EXIT_OK
    t = time.perf_counter()
    sol = solve_reduced(spec, reg, cfg.solver)
    writer.timings["numeric"] = time.perf_counter() - t
    records.append(_record("numeric", sol.mean_prediction, spec, reg, tc, None, sol.objective, sol.kkt,
                           {"iterations": sol.iterations, "converged": sol.converged}))
    if not sol.converged:
        status = EXIT_NUMERIC
    if cfg.solve_full:
        if spec.N > cfg.full_cap or not spec.is_integral:
            print(f"note: full problem skipped (N={spec.N:g}, cap {cfg.full_cap})", file=sys.stderr)
        else:
            t = time.perf_counter()
            fp, fsol = solve_full(spec, reg, cfg.solver, size_cap=cfg.full_cap)
            writer.timings["full"] = time.perf_counter() - t
            U, s, Vt = np.linalg.svd(fp.Z, full_matrices=False)
            r = int(np.sum(s > 1e-6 * s[0])) if s[0] > 0 else 0
            H = np.sqrt(s[:r])[:, None] * Vt[:r]  # balanced per-sample features
            nc1 = nc1_metric(H, spec.labels()) if r else 0.0
            records.append(_record("full", fsol.mean_prediction, spec, reg, tc, None, fsol.objective,
                                   fsol.kkt, {"iterations": fsol.iterations, "converged": fsol.converged,
                                              "nc1": nc1, "within_class_spread": fsol.within_class_spread}))
            if not fsol.converged:
                status = EXIT_NUMERIC
    comparison = None
    if tc is not None and tc.to_problem().class_sizes == spec.class_sizes:
        t = time.perf_counter()
        p, mp = classify_and_solve(tc, reg.lambda_Z, reg.lambda_b)
        writer.timings["analytic"] = time.perf_counter() - t
        records.append(_record("analytic", mp, spec, reg, tc, p.regime.value, reduced_objective(mp, spec, reg),
                               kkt_residual(mp, spec, reg), {"boundary": p.boundary}))
        ref = np.linalg.norm(mp.Zbar)
        diff = np.linalg.norm(mp.Zbar - sol.mean_prediction.Zbar)
        comparison = {"relative_frobenius": diff / ref if ref > 0 else diff,
                      "objective_gap": records[0]["objective"] - records[-1]["objective"]}
    summary = {"inputs": {"class_sizes": list(spec.class_sizes), "lambda_Z": reg.lambda_Z,
                          "lambda_b": reg.lambda_b},
               "records": records, "comparison": comparison}
    writer.write(SOLVE_COLUMNS, records, summary)
    for r in records:
        print(f"{r['route']:>8}: regime={r['regime']} objective={r['objective']:.12g} "
              f"stationarity={r['stationarity']:.3g}")
    if comparison:
        print(f"relative Frobenius distance analytic vs numeric: {comparison['relative_frobenius']:.3g}")
    return status


# ---------------------------------------------------------------- sweep

def _point(cfg: RunConfig, axis: str, value: float):
    """(spec, reg, two-cluster spec) at one sweep value."""
    reg = dict(cfg.reg)
    prob = dict(cfg.problem)
    if axis in ("lambda_Z", "lambda_b"):
        reg[axis] = value
    else:
        tc = cfg.two_cluster()
        if tc is None:
            raise ConfigError(f"[sweep] axis {axis} needs a two-cluster problem")
        if axis == "n_A":
            prob = {"k_A": tc.k_A, "k_B": tc.k_B, "n_A": value, "n_B": tc.n_B}
        else:
            nB = value / (tc.k_A * tc.r + tc.k_B)
            prob = {"k_A": tc.k_A, "k_B": tc.k_B, "n_A": tc.r * nB, "n_B": nB}
    c = replace(cfg, problem=prob, reg=reg)
    return c.problem_spec(), c.reg_params(), c.two_cluster()


def _evaluate(args):
    cfg, axis, value, route = args
    spec, reg, tc = _point(cfg, axis, value)
    use_analytic = tc is not None and route != "numeric"
    if route == "analytic" and tc is None:
        raise ConfigError("[sweep] route analytic needs a two-cluster problem")
    if use_analytic:
        p, mp = classify_and_solve(tc, reg.lambda_Z, reg.lambda_b)
        regime, conv = p.regime.value, True
    else:
        sol = solve_reduced(spec, reg, cfg.solver)
        mp, regime, conv = sol.mean_prediction, None, sol.converged
    row = {"value": value, "regime": regime, "converged": conv,
           "etf_deviation": etf_deviation(mp.Zbar)}
    if tc is not None:
        rA, rB, guess = rank_profile(mp, tc)
        co = fit_block_structure(mp, spec).two_cluster
        row.update({"a": co.a, "b": co.b, "c": co.c, "d": co.d, "m": co.m,
                    "rank_A": rA, "rank_B": rB})
        row["label"] = guess.value if guess else f"rank({rA},{rB})"
        if regime is None:
            row["regime"] = row["label"]
    else:
        row["label"] = row["regime"] = "n/a"
    return row


def _map(fn, items, workers):
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


def _refine(cfg, axis, lo, hi, lo_label, route, rel_tol):
    """Bisect on the axis until the label change is bracketed tightly."""
    integer = axis in ("n_A", "N")
    while True:
        if integer and hi - lo <= 1:
            break
        if not integer and hi - lo <= rel_tol * abs(hi):
            break
        mid = math.floor((lo + hi) / 2) if integer else 0.5 * (lo + hi)
        if _evaluate((cfg, axis, mid, route))["label"] == lo_label:
            lo = mid
        else:
            hi = mid
    return lo, hi


SWEEP_COLUMNS = ["value", "regime", "a", "b", "c", "d", "m", "rank_A", "rank_B", "etf_deviation", "converged"]


def cmd_sweep(cfg: RunConfig, out: Path, workers: int) -> int:
    if cfg.sweep is None:
        raise ConfigError("[sweep] section is required for the sweep command")
    sw = cfg.sweep
    grid = sw.grid()
    if len(grid) < 2:
        raise ConfigError("[sweep] grid has fewer than two distinct points")
    writer = RunWriter("sweep", out)
    rows = _map(_evaluate, [(cfg, sw.axis, v, sw.route) for v in grid], workers)
    transitions = []
    for r0, r1 in zip(rows, rows[1:]):
        if r0["label"] != r1["label"]:
            lo, hi = _refine(cfg, sw.axis, r0["value"], r1["value"], r0["label"], sw.route, sw.refine_tol)
            integer = sw.axis in ("n_A", "N")
            transitions.append({
                "from": r0["label"], "to": r1["label"],
                "grid_interval": [r0["value"], r1["value"]],
                "bracket": [lo, hi],
                "estimate": hi if integer else 0.5 * (lo + hi),
            })
    tc = cfg.two_cluster()
    reference = None
    if tc is not None and sw.axis == "lambda_Z":
        reference = dict(zip(("minority", "complete"), collapse_lambdas(tc)))
    summary = {"axis": sw.axis, "grid_points": len(grid), "transitions": transitions,
               "threshold_reference": reference,
               "unconverged_points": [r["value"] for r in rows if not r["converged"]]}
    writer.write(SWEEP_COLUMNS, rows, summary)
    for t in transitions:
        print(f"transition {t['from']} -> {t['to']} at {sw.axis} = {t['estimate']:.10g}")
    return EXIT_NUMERIC if summary["unconverged_points"] else EXIT_OK


# ---------------------------------------------------------------- threshold

def cmd_threshold(cfg: RunConfig, out: Path) -> int:
    p = cfg.problem
    need = {"k_A", "k_B", "n_B"}
    if not need <= p.keys() and cfg.two_cluster() is None:
        raise ConfigError("[problem] threshold needs k_A, k_B, n_B (and n_A for the lambda pair)")
    tc = cfg.two_cluster()
    kA = tc.k_A if tc else p["k_A"]
    kB = tc.k_B if tc else p["k_B"]
    nB = tc.n_B if tc else p["n_B"]
    writer = RunWriter("threshold", out)
    rows, summary = [], {}
    if tc is not None:
        lo, hi = collapse_lambdas(tc)
        rows += [{"quantity": "lambda_minority", "value": lo}, {"quantity": "lambda_complete", "value": hi}]
        summary["collapse_lambdas"] = {"minority": lo, "complete": hi}
    if "lambda_Z" in cfg.reg:
        cr = minority_collapse_ratio(cfg.reg["lambda_Z"], nB, kA, kB)
        rows.append({"quantity": "minority_collapse_ratio", "value": cr.ratio, "flag": "clamped" if cr.clamped else ""})
        summary["minority_collapse_ratio"] = {"ratio": cr.ratio, "raw": cr.raw, "clamped": cr.clamped,
                                              "n_A_threshold": cr.ratio * nB}
    if math.isinf(cfg.reg.get("lambda_b", 0.0)):
        if tc is None:
            raise ConfigError("[problem] lambda* needs n_A")
        lam = lambda_star_bias_free(tc)
        rows.append({"quantity": "lambda_star_bias_free", "value": lam})
        summary["lambda_star_bias_free"] = lam
    if not rows:
        raise ConfigError("[problem]/[reg] nothing to compute: give n_A or lambda_Z")
    writer.write(["quantity", "value", "flag"], rows, summary)
    for r in rows:
        print(f"{r['quantity']:>24}: {r['value']:.10g} {r.get('flag', '')}".rstrip())
    return EXIT_OK


# ---------------------------------------------------------------- asymptotic

def cmd_asymptotic(cfg: RunConfig, out: Path) -> int:
    A = dict(cfg.asymptotic)
    tc = cfg.two_cluster()
    kA = A.get("k_A", tc.k_A if tc else cfg.problem.get("k_A"))
    kB = A.get("k_B", tc.k_B if tc else cfg.problem.get("k_B"))
    for key, v in (("k_A", kA), ("k_B", kB), ("r", A.get("r")), ("lambda", A.get("lambda")),
                   ("N_grid", A.get("N_grid"))):
        if v is None:
            raise ConfigError(f"[asymptotic] {key}: missing")
    lb = A.get("lambda_b", cfg.reg.get("lambda_b", math.inf))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = asymptotic_sweep(int(kA), int(kB), A["r"], A["lambda"], lb, A["N_grid"])
    skipped = [str(w.message) for w in caught]
    for msg in skipped:
        print(f"warning: {msg}", file=sys.stderr)
    slope = convergence_slope(rows)
    if slope is None:
        print("notice: fewer than two rows, slope omitted", file=sys.stderr)
    table = [{"N": r.N, "b_over_c": r.ratios[0], "a_over_c": r.ratios[1], "d_over_b": r.ratios[2],
              "max_dev": r.max_dev, "log_product": r.log_product, "etf_deviation": r.etf_deviation}
             for r in rows]
    writer = RunWriter("asymptotic", out)
    writer.write(["N", "b_over_c", "a_over_c", "d_over_b", "max_dev", "log_product", "etf_deviation"], table,
                 {"slope_log_dev_vs_loglogN": slope, "skipped": skipped, "rows": len(rows)})
    for r in table:
        print(f"N={r['N']:.3g} max_dev={r['max_dev']:.6g} max_dev*logN={r['log_product']:.6g}")
    if slope is not None:
        print(f"slope of log(max_dev) vs log(log N): {slope:.4f}")
    return EXIT_OK


# ---------------------------------------------------------------- validate

def cmd_validate(cfg: RunConfig, out: Path, seed: int, fault: Optional[str]) -> int:
    results = validation.run_all(seed, cfg.validate_instances, fault=fault)
    report = validation.format_report(results, seed)
    writer = RunWriter("validate", out)
    rows = [r._asdict() for r in results]
    writer.write(["suite", "instances", "worst", "tolerance", "passed"], rows,
                 {"seed": seed, "suites": rows, "all_passed": all(r.passed for r in results)})
    (out / "validation.txt").write_text(report)
    sys.stdout.write(report)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VALIDATION


# ---------------------------------------------------------------- entry

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ufmcollapse", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("solve", "sweep", "threshold", "asymptotic", "validate"):
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="INI or JSON run configuration")
        sp.add_argument("--out", default=None, help="output directory (default ./out)")
        sp.add_argument("--workers", type=int, default=os.cpu_count() or 1)
        sp.add_argument("--bias-free", action="store_true", help="override lambda_b with +inf")
        if name == "validate":
            sp.add_argument("--seed", type=int, default=0)
            sp.add_argument("--inject-fault", default=None, choices=validation.SUITES,
                            help="test hook: corrupt one suite's measurement")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = parse_config(args.config, bias_free=args.bias_free)
        out = Path(args.out or cfg.out_dir or "out")
        if args.command == "solve":
            return cmd_solve(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(cfg, out, max(1, args.workers))
        if args.command == "threshold":
            return cmd_threshold(cfg, out)
        if args.command == "asymptotic":
            return cmd_asymptotic(cfg, out)
        return cmd_validate(cfg, out, args.seed, args.inject_fault)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InvalidArgumentError as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as exc:
        print(f"numeric failure: {exc} {exc.diagnostics}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
