"""Randomized self-checks behind the ``validate`` command.

Each suite compares an implementation against an independent oracle on
seeded random instances and reports its worst measurement.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional

import numpy as np

from .core_model import (
    MeanPrediction,
    ProblemSpec,
    RegParams,
    hessian_quadratic_form,
    kkt_residual,
    reduced_ce,
    smooth_gradient,
)
from .cvx_solver import singular_value_shrink, solve_reduced
from .thresholds import collapse_lambdas, minority_collapse_ratio
from .two_cluster import TwoClusterSpec, classify_and_solve

SUITES = ("gradient", "prox", "hessian", "kkt_analytic", "dual_route", "thresholds")


class SuiteResult(NamedTuple):
    suite: str
    instances: int
    worst: float
    comparator: str   # "<=" : pass iff worst <= tolerance ; ">" : pass iff worst > tolerance
    tolerance: float
    passed: bool


def _random_reduced(rng):
    K = int(rng.integers(3, 7))
    spec = ProblemSpec(tuple(int(v) for v in rng.integers(1, 60, K)))
    lb = float(10 ** rng.uniform(-3, 0))
    mp = MeanPrediction(rng.normal(size=(K, K)), rng.normal(size=K))
    return spec, RegParams(float(10 ** rng.uniform(-4, -2)), lb), mp


def _smooth_value(Z, b, spec, reg):
    return reduced_ce(MeanPrediction(Z, b), spec) + 0.5 * reg.lambda_b * float(b @ b)


def suite_gradient(rng, n):
    worst = 0.0
    h = 1e-5
    for _ in range(n):
        spec, reg, mp = _random_reduced(rng)
        gZ, gb = smooth_gradient(mp, spec, reg)
        Z, b = np.array(mp.Zbar), np.array(mp.bias)
        fZ = np.zeros_like(Z)
        for idx in np.ndindex(*Z.shape):
            E = np.zeros_like(Z)
            E[idx] = h
            fZ[idx] = (_smooth_value(Z + E, b, spec, reg) - _smooth_value(Z - E, b, spec, reg)) / (2 * h)
        fb = np.array([(_smooth_value(Z, b + h * e, spec, reg) - _smooth_value(Z, b - h * e, spec, reg)) / (2 * h)
                       for e in np.eye(b.size)])
        g = np.concatenate([gZ.ravel(), gb])
        fd = np.concatenate([fZ.ravel(), fb])
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(g)))
    return worst


def suite_prox(rng, n):
    """Largest improvement any perturbed candidate achieves over the prox output."""
    worst = -math.inf
    for _ in range(n):
        M = rng.normal(size=(4, 4))
        tau = float(rng.uniform(0.05, 1.5))
        obj = lambda X: 0.5 * float(((X - M) ** 2).sum()) + tau * float(np.linalg.svd(X, compute_uv=False).sum())
        X = singular_value_shrink(M, tau)
        base = obj(X)
        for eps in (1e-1, 1e-3, 1e-5):
            for _ in range(40):
                worst = max(worst, base - obj(X + eps * rng.normal(size=X.shape)))
    return worst


def suite_hessian(rng, n):
    """Smallest Rayleigh quotient of the CE Hessian over centered directions."""
    worst = math.inf
    for _ in range(n):
        spec, reg, mp = _random_reduced(rng)
        K = spec.K
        C = np.eye(K) - np.ones((K, K)) / K
        for _ in range(10):
            dZ = rng.normal(size=(K, K))
            db = rng.normal(size=K)
            dZ = C @ (dZ + db[:, None]) - db[:, None]  # columns of dZ + db 1^T centered
            X = dZ + db[:, None]
            q = hessian_quadratic_form(mp, spec, dZ, db)
            worst = min(worst, q / float((X * X).sum()))
    return worst


def _random_two_cluster(rng):
    kA, kB = (int(v) for v in rng.integers(2, 6, 2))
    nB = float(rng.integers(5, 120))
    nA = float(round(nB * rng.uniform(1.5, 6)))
    lb = float(rng.choice([0.001, 0.01, 1.0, math.inf]))
    return TwoClusterSpec(kA, kB, nA, nB), lb


def _regime_lambdas(tc):
    lo, hi = collapse_lambdas(tc)
    return [0.5 * lo, 0.9 * lo, 1.1 * lo, 0.5 * (lo + hi), 0.95 * hi, 1.2 * hi]


def suite_kkt_analytic(rng, n):
    worst = 0.0
    for _ in range(n):
        tc, lb = _random_two_cluster(rng)
        for lz in _regime_lambdas(tc):
            _, mp = classify_and_solve(tc, lz, lb)
            k = kkt_residual(mp, tc.to_problem(), RegParams(lz, lb))
            worst = max(worst, k.stationarity, k.bias_residual, -k.feasibility_margin)
    return worst


def suite_dual_route(rng, n):
    worst = 0.0
    for _ in range(n):
        tc, lb = _random_two_cluster(rng)
        for lz in _regime_lambdas(tc):
            _, mp = classify_and_solve(tc, lz, lb)
            sol = solve_reduced(tc.to_problem(), RegParams(lz, lb))
            ref = np.linalg.norm(mp.Zbar)
            d = np.linalg.norm(sol.mean_prediction.Zbar - mp.Zbar)
            worst = max(worst, d / ref if ref > 0 else d)
    return worst


def suite_thresholds(rng, n):
    worst = 0.0
    for _ in range(10 * n):
        kA, kB = (int(v) for v in rng.integers(2, 10, 2))
        nB = float(rng.integers(1, 500))
        lz = float(10 ** rng.uniform(-4, -1.5))
        r = minority_collapse_ratio(lz, nB, kA, kB).raw
        N = nB * (kA * r + kB)
        worst = max(worst, abs(N * lz - math.sqrt(nB)) / math.sqrt(nB))
    return worst


_SPEC = {
    "gradient": (suite_gradient, "<=", 1e-6),
    "prox": (suite_prox, "<=", 1e-12),
    "hessian": (suite_hessian, ">", 0.0),
    "kkt_analytic": (suite_kkt_analytic, "<=", 1e-7),
    "dual_route": (suite_dual_route, "<=", 1e-5),
    "thresholds": (suite_thresholds, "<=", 1e-10),
}


def run_all(seed: int, instances: int = 5, fault: Optional[str] = None) -> list:
    """Run every suite with its own seeded stream. ``fault`` names a suite
    whose measurement is deliberately corrupted (test hook)."""
    out = []
    for i, name in enumerate(SUITES):
        fn, cmp, tol = _SPEC[name]
        rng = np.random.default_rng([seed, i])
        worst = fn(rng, instances)
        if name == fault:
            worst = worst + 1.0 if cmp == "<=" else -1.0
        passed = worst <= tol if cmp == "<=" else worst > tol
        out.append(SuiteResult(name, instances, float(worst), cmp, tol, bool(passed)))
    return out


def format_report(results, seed: int) -> str:
    lines = [f"validation report (seed {seed})",
             f"{'suite':<14}{'instances':>10}  {'worst':>14}  {'criterion':<14}status"]
    for r in results:
        crit = f"{r.comparator} {r.tolerance:.0e}"
        lines.append(f"{r.suite:<14}{r.instances:>10}  {r.worst:>14.6e}  {crit:<14}{'PASS' if r.passed else 'FAIL'}")
    lines.append("overall: " + ("PASS" if all(r.passed for r in results) else "FAIL"))
    return "\n".join(lines) + "\n"
