"""Collapse thresholds in lambda_Z and in the imbalance ratio."""

from __future__ import annotations

import math
from typing import NamedTuple

from .errors import InvalidArgumentError, NumericError
from .roots import bracketed_root
from .two_cluster import TwoClusterSpec, t_star, xi


def collapse_lambdas(spec: TwoClusterSpec):
    """``(sqrt(n_B)/N, sqrt(n_A)/N)``: minority collapse starts above the
    first value, ``Zbar = 0`` from the second on."""
    return math.sqrt(spec.n_B) / spec.N, math.sqrt(spec.n_A) / spec.N


class CollapseRatio(NamedTuple):
    ratio: float      # clamped at 1
    raw: float        # value of the formula before clamping
    clamped: bool


def minority_collapse_ratio(lambda_Z, n_B, k_A, k_B) -> CollapseRatio:
    """Smallest ``r = n_A/n_B`` at which the minority classes collapse.

    Solves ``N(r) lambda_Z = sqrt(n_B)`` with ``N(r) = n_B (k_A r + k_B)``.
    Values below 1 mean collapse at any imbalance and are clamped.
    """
    if not lambda_Z > 0:
        raise InvalidArgumentError("lambda_Z must be positive")
    if n_B < 1:
        raise InvalidArgumentError("n_B must be >= 1")
    raw = (1.0 / (lambda_Z * math.sqrt(n_B)) - k_B) / k_A
    return CollapseRatio(max(raw, 1.0), raw, raw < 1.0)


def lambda_star_bias_free(spec: TwoClusterSpec, tol: float = 1e-12) -> float:
    """Bias-free switch point between the two middle regimes: the root of
    ``xi(., inf)``, which increases across ``(sqrt(n_B)/N, sqrt(n_A)/N)``."""
    lo, hi = collapse_lambdas(spec)
    f = lambda lam: xi(lam, math.inf, spec)
    # xtol well below tol: xi is steep in lambda and must vanish to 1e-10
    lam = bracketed_root(f, lo, hi, xtol=min(tol, 1e-6 * lo) * 1e-4, what="lambda*")
    if abs(f(lam)) > 1e-10:
        raise NumericError("lambda* residual too large", {"lambda": lam, "xi": f(lam)})
    return lam


def lambda_star_identity_residual(spec: TwoClusterSpec, lam: float) -> float:
    """``t*(lam) - sqrt(k_B n_A / ((N lam)^2 K - k_A n_B))``; zero at lambda*."""
    L = spec.N * lam
    target = math.sqrt(spec.k_B * spec.n_A / (L * L * spec.K - spec.k_A * spec.n_B))
    return t_star(lam, math.inf, spec) - target


def balanced_mean_prediction(K: int, N, lambda_Z) -> float:
    """Coefficient ``a`` of the balanced optimum ``Zbar = a (K I - J)``."""
    if K < 2:
        raise InvalidArgumentError("K must be >= 2")
    if N % K:
        raise InvalidArgumentError("N must be divisible by K")
    L = N * lambda_Z
    if L >= math.sqrt(N / K):
        return 0.0
    arg = math.sqrt(K) / (math.sqrt(N) * lambda_Z) - K + 1
    assert arg > 1, arg
    return math.log(arg) / K
