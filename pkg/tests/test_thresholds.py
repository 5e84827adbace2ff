import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ufmcollapse.core_model import RegParams
from ufmcollapse.cvx_solver import solve_reduced
from ufmcollapse.diagnostics import rank_profile
from ufmcollapse.errors import InvalidArgumentError
from ufmcollapse.thresholds import (
    balanced_mean_prediction,
    collapse_lambdas,
    lambda_star_bias_free,
    lambda_star_identity_residual,
    minority_collapse_ratio,
)
from ufmcollapse.two_cluster import TwoClusterSpec, xi


def test_collapse_lambdas_examples():
    lo, hi = collapse_lambdas(TwoClusterSpec(5, 5, 500, 100))
    assert lo == pytest.approx(1 / 300, rel=1e-15)
    lo, hi = collapse_lambdas(TwoClusterSpec(3, 7, 500, 100))
    assert lo == pytest.approx(10 / 2200, rel=1e-15)
    assert hi == pytest.approx(math.sqrt(500) / 2200, rel=1e-15)
    assert round(lo, 4) == 0.0045 and round(hi, 4) == 0.0102


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 20), st.integers(2, 20), st.integers(1, 10_000), st.floats(1.001, 50))
def test_minority_below_complete(kA, kB, nB, r):
    lo, hi = collapse_lambdas(TwoClusterSpec(kA, kB, nB * r, nB))
    assert lo < hi


def test_ratio_examples():
    r = minority_collapse_ratio(0.005, 100, 5, 5)
    assert r.ratio == 3.0 and r.raw == 3.0 and not r.clamped
    # lambda sqrt(n_B) = 1/k_B: formula gives 0, clamped to 1
    r = minority_collapse_ratio(1 / (4 * 10), 100, 3, 4)
    assert r.raw == pytest.approx(0.0, abs=1e-15) and r.ratio == 1.0 and r.clamped
    with pytest.raises(InvalidArgumentError):
        minority_collapse_ratio(0.0, 100, 5, 5)
    with pytest.raises(InvalidArgumentError):
        minority_collapse_ratio(0.01, 0.5, 5, 5)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-5, 1e-2), st.integers(1, 5000), st.integers(2, 12), st.integers(2, 12))
def test_ratio_consistent_with_collapse_lambdas(lz, nB, kA, kB):
    raw = minority_collapse_ratio(lz, nB, kA, kB).raw
    if raw <= 1:
        return
    lo, _ = collapse_lambdas(TwoClusterSpec(kA, kB, raw * nB, nB))
    assert lo == pytest.approx(lz, rel=1e-10)


def test_ratio_matches_numeric_rank_drop():
    # numeric route: minority block rank on either side of the predicted n_A
    lz, nB = 0.005, 100
    for nA, rank in ((295, 5), (305, 1)):
        tc = TwoClusterSpec(5, 5, nA, nB)
        mp = solve_reduced(tc.to_problem(), RegParams(lz, 0.01)).mean_prediction
        assert rank_profile(mp, tc)[1] == rank


def test_lambda_star():
    rng = np.random.default_rng(0)
    for _ in range(20):
        kA, kB = (int(v) for v in rng.integers(2, 8, 2))
        nB = float(rng.integers(2, 300))
        tc = TwoClusterSpec(kA, kB, float(round(nB * rng.uniform(1.3, 9))), nB)
        lo, hi = collapse_lambdas(tc)
        ls = lambda_star_bias_free(tc)
        assert lo < ls < hi
        assert abs(xi(ls, math.inf, tc)) <= 1e-10
        assert abs(lambda_star_identity_residual(tc, ls)) <= 1e-8
        d = 1e-6 * ls
        assert xi(ls - d, math.inf, tc) < 0 < xi(ls + d, math.inf, tc)


def test_balanced_closed_form():
    assert balanced_mean_prediction(10, 1000, 0.001) == pytest.approx(0.451086, abs=1e-6)
    assert balanced_mean_prediction(10, 1000, math.sqrt(100) / 1000) == 0.0
    assert balanced_mean_prediction(10, 1000, 0.02) == 0.0
    with pytest.raises(InvalidArgumentError):
        balanced_mean_prediction(1, 10, 0.01)
    with pytest.raises(InvalidArgumentError):
        balanced_mean_prediction(3, 10, 0.01)


def test_balanced_continuous_nonincreasing():
    K, N = 6, 600
    edge = math.sqrt(N / K) / N
    grid = np.linspace(1e-4, 1.2 * edge, 300)
    vals = [balanced_mean_prediction(K, N, l) for l in grid]
    assert all(x >= y for x, y in zip(vals, vals[1:]))
    assert balanced_mean_prediction(K, N, edge * (1 - 1e-9)) <= 1e-8


def test_thresholds_bracket_numeric_regime_flips():
    tc = TwoClusterSpec(4, 3, 90, 25)
    lo, hi = collapse_lambdas(tc)
    grid = np.geomspace(0.5 * lo, 1.5 * hi, 40)
    ranks, norms = [], []
    for lz in grid:
        mp = solve_reduced(tc.to_problem(), RegParams(float(lz), 0.1)).mean_prediction
        ranks.append(rank_profile(mp, tc)[1])
        norms.append(np.linalg.norm(mp.Zbar))
    i = next(i for i, r in enumerate(ranks) if r < tc.k_B)
    assert grid[i - 1] <= lo <= grid[i] and ranks[i] == 1
    j = next(j for j, v in enumerate(norms) if v < 1e-8)
    assert grid[j - 1] <= hi <= grid[j]
