import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ufmcollapse.core_model import RegParams, kkt_residual, softmax_columns
from ufmcollapse.cvx_solver import solve_reduced
from ufmcollapse.diagnostics import fit_block_structure, rank_profile
from ufmcollapse.errors import DomainError, RegimeError
from ufmcollapse.thresholds import balanced_mean_prediction, collapse_lambdas, lambda_star_bias_free
from ufmcollapse.two_cluster import (
    BlockParams,
    Regime,
    TwoClusterSpec,
    build_block_matrix,
    classify_and_solve,
    eta,
    f2_fn,
    g1,
    g2,
    m_of_t,
    sigma_w,
    solve_case_a,
    solve_case_b,
    solve_case_c,
    solve_case_d,
    t_star,
    x1_case_a,
    x1_case_b,
    x2_fn,
    x_case_c,
    xi,
    xi_bias_free,
)

TC = TwoClusterSpec(5, 5, 500, 100)


def random_tc(rng):
    kA, kB = (int(v) for v in rng.integers(2, 7, 2))
    nB = float(rng.integers(3, 200))
    return TwoClusterSpec(kA, kB, float(round(nB * rng.uniform(1.2, 8))), nB)


def certified(mp, tc, lz, lb, tol=1e-7):
    k = kkt_residual(mp, tc.to_problem(), RegParams(lz, lb))
    return k.stationarity <= tol and k.bias_residual <= tol and k.feasibility_margin >= -1e-9


def test_spec_invariants():
    assert TC.N == 3000 and TC.K == 10 and TC.r == 5
    for bad in [(1, 5, 500, 100), (5, 5, 100, 100), (5, 5, 50, 100), (5, 5, 500, 0.5)]:
        with pytest.raises(ValueError):
            TwoClusterSpec(*bad)


# ---------------------------------------------------------------- scalar functions

def test_g2_positive_at_one():
    rng = np.random.default_rng(0)
    for _ in range(50):
        tc = random_tc(rng)
        lz = rng.uniform(0.01, 0.999) * math.sqrt(tc.n_A) / tc.N
        assert g2(1.0, lz, tc) > 0


def test_g1_strictly_decreasing():
    rng = np.random.default_rng(1)
    lz = 0.7 * math.sqrt(TC.n_B) / TC.N
    for _ in range(100):
        x1, x2 = sorted(rng.uniform(1e-3, 50, 2))
        assert g1(x1, lz, TC) > g1(x2, lz, TC)


def test_g1_at_threshold():
    lz = math.sqrt(TC.n_B) / TC.N
    for x in (0.1, 1.0, 7.0):
        assert g1(x, lz, TC) == pytest.approx(-TC.k_B * math.log(x), abs=1e-12)


def test_g_domain_errors():
    with pytest.raises(DomainError):
        g1(-1.0, 0.001, TC)
    with pytest.raises(DomainError) as e:
        g1(1.0, 2 * math.sqrt(TC.n_B) / TC.N, TC)
    assert e.value.boundary == pytest.approx(math.sqrt(TC.n_B) / TC.N)


def test_x_functions():
    assert x2_fn(math.sqrt(TC.n_A / TC.n_B), TC) == pytest.approx(1.0, rel=1e-14)
    for t in np.geomspace(1e-3, 1e3, 40):
        assert x1_case_a(t, TC) * x2_fn(t, TC) <= 1 + 1e-14
        assert x_case_c(t, 1.0, TC) == pytest.approx(x2_fn(t, TC), rel=1e-14)


def test_x1_case_b_domain_error_carries_boundary():
    lz = 0.9 * math.sqrt(TC.n_A) / TC.N
    with pytest.raises(DomainError) as e:
        x1_case_b(1e6, lz, TC)
    assert e.value.boundary is not None and e.value.boundary < 1e6


def test_m_of_t():
    lz = 0.002
    assert m_of_t(TC.n_A / TC.n_B, lz, 0.01, TC) == 0.0
    assert all(m_of_t(t, lz, math.inf, TC) == 0.0 for t in (0.0, 1.0, 9.0))
    vals = [m_of_t(t, lz, 0.01, TC) for t in np.linspace(0, 10, 50)]
    assert all(x > y for x, y in zip(vals, vals[1:]))


def test_f2_and_eta():
    lz = 0.8 * math.sqrt(TC.n_A) / TC.N
    assert f2_fn(TC.r, lz, 0.01, TC) > 0
    vals = [f2_fn(t, lz, 0.01, TC) for t in np.linspace(0, TC.r, 50)]
    assert all(x < y for x, y in zip(vals, vals[1:]))
    lo, hi = collapse_lambdas(TC)
    etas = [eta(l, 0.01, TC) for l in np.linspace(lo, hi, 30)]
    assert all(x > y for x, y in zip(etas, etas[1:]))
    assert eta(hi, 0.01, TC) < 0


def test_t_star_properties():
    lo, hi = collapse_lambdas(TC)
    ts = [t_star(l, 0.01, TC) for l in np.linspace(0.2 * lo, hi, 40)]
    assert all(0 <= t <= TC.r for t in ts)
    assert all(x <= y + 1e-12 for x, y in zip(ts, ts[1:]))
    assert eta(0.2 * lo, math.inf, TC) >= 0 and t_star(0.2 * lo, math.inf, TC) == 0.0
    l = 0.9 * hi
    t = t_star(l, 0.01, TC)
    assert t > 0 and abs(f2_fn(t, l, 0.01, TC)) <= 1e-12


def test_xi_bias_free_formula():
    lo, hi = collapse_lambdas(TC)
    l = 0.5 * (lo + hi)
    t = t_star(l, math.inf, TC)
    ref = TC.K - math.sqrt((TC.k_B * TC.n_A / t ** 2 + TC.k_A * TC.n_B) * TC.K) / (TC.N * l)
    assert xi_bias_free(l, TC) == pytest.approx(ref, rel=1e-14)


def test_xi_bias_free_increasing_single_sign_change():
    lo, hi = collapse_lambdas(TC)
    vals = [xi_bias_free(l, TC) for l in np.linspace(lo, hi, 60)]
    finite = [v for v in vals if v > -math.inf]
    assert all(x < y for x, y in zip(finite, finite[1:]))
    assert sum(1 for x, y in zip(vals, vals[1:]) if (x < 0) != (y < 0)) == 1


def test_xi_outside_middle_is_domain_error():
    lo, _ = collapse_lambdas(TC)
    with pytest.raises(DomainError):
        xi(0.5 * lo, 0.01, TC)


# ---------------------------------------------------------------- case solvers

def test_case_a_near_symmetric():
    nB = 100.0
    tc = TwoClusterSpec(4, 4, nB * (1 + 1e-6), nB)
    lz = 0.002
    p = solve_case_a(tc, lz, 0.01)
    assert abs(p.t - 1) <= 1e-4
    a_bal = balanced_mean_prediction(8, 800, lz)
    for v in (p.a, p.b, p.c, p.d):
        assert v == pytest.approx(a_bal, rel=1e-4)


def test_case_a_certified():
    p = solve_case_a(TC, 0.0005, 0.01)
    mp = build_block_matrix(p, TC)
    assert certified(mp, TC, 0.0005, 0.01)
    assert p.b > 0 and p.c > 0 and p.a > 0
    assert p.a - p.c + p.d - p.b <= 0


def test_case_a_sign_pattern_across_regime():
    # b, c > 0 throughout; d crosses zero before the threshold, where the
    # solution must join the minority-collapsed one (k_A b + k_B d = 0)
    lo, _ = collapse_lambdas(TC)
    for lb in (0.01, math.inf):
        for frac in (0.1, 0.5, 0.9, 1.0):
            p = solve_case_a(TC, frac * lo, lb)
            assert p.b > 0 and p.c > 0 and p.a > 0
            assert p.a - p.c + p.d - p.b <= 0
        p = solve_case_a(TC, lo, lb)
        assert TC.k_A * p.b + TC.k_B * p.d == pytest.approx(0.0, abs=1e-8)


def test_case_a_wrong_regime():
    with pytest.raises(RegimeError):
        solve_case_a(TC, 0.004, 0.01)


def test_case_b_just_above_threshold():
    lo, _ = collapse_lambdas(TC)
    lz = lo * (1 + 1e-3)
    assert xi(lz, 0.01, TC) < 0
    p = solve_case_b(TC, lz, 0.01)
    assert abs(TC.k_A * p.b + TC.k_B * p.d) <= 1e-15 * p.b
    assert p.a > 0 and p.b > 0 and p.c > 0
    mp = build_block_matrix(p, TC)
    assert certified(mp, TC, lz, 0.01)
    assert p.alpha == 1 / (TC.N * lz) and math.sqrt(TC.n_B) * p.alpha <= 1


def test_case_b_continuous_with_case_a():
    lo, _ = collapse_lambdas(TC)
    pa = solve_case_a(TC, lo, 0.01)
    pb = solve_case_b(TC, lo * (1 + 1e-9), 0.01)
    assert np.allclose([pa.a, pa.b, pa.c, pa.d], [pb.a, pb.b, pb.c, pb.d], atol=1e-6)


def test_case_c_just_below_complete_threshold():
    _, hi = collapse_lambdas(TC)
    lz = hi * (1 - 1e-3)
    assert xi(lz, 0.01, TC) > 0
    p = solve_case_c(TC, lz, 0.01)
    assert p.b == p.c == p.d == 0 and p.a > 0 and 0 < p.tau <= 1
    mp = build_block_matrix(p, TC)
    assert certified(mp, TC, lz, 0.01)
    assert max(math.sqrt(TC.n_B) * p.alpha, p.tau) <= 1


def test_case_c_bias_free_matches_numeric():
    _, hi = collapse_lambdas(TC)
    lz = 0.95 * hi
    p = solve_case_c(TC, lz, math.inf)
    assert p.m == 0.0
    mp = build_block_matrix(p, TC)
    num = solve_reduced(TC.to_problem(), RegParams(lz)).mean_prediction.Zbar
    assert np.linalg.norm(num - mp.Zbar) / np.linalg.norm(mp.Zbar) <= 1e-5


def test_middle_solvers_refuse_wrong_sign():
    lo, hi = collapse_lambdas(TC)
    with pytest.raises(RegimeError):
        solve_case_c(TC, lo * (1 + 1e-3), 0.01)
    with pytest.raises(RegimeError):
        solve_case_b(TC, hi * (1 - 1e-3), 0.01)


def test_case_d():
    _, hi = collapse_lambdas(TC)
    p = solve_case_d(TC, 1.2 * hi, math.inf)
    assert p.m == 0.0 and (p.a, p.b, p.c, p.d) == (0, 0, 0, 0)
    assert sigma_w(1.0, TC) == pytest.approx((TC.k_B * TC.n_A + TC.k_A * TC.n_B) / TC.K, rel=1e-14)
    assert sigma_w(1.0, TC) <= TC.n_A
    rng = np.random.default_rng(3)
    for _ in range(30):
        tc = random_tc(rng)
        lb = float(10 ** rng.uniform(-4, 1))
        p = solve_case_d(tc, 1.5 * math.sqrt(tc.n_A) / tc.N, lb)
        w = math.exp(tc.K * p.m)
        assert 1 - 1e-12 <= w <= tc.r * (1 + 1e-12)
        assert certified(build_block_matrix(p, tc), tc, 1.5 * math.sqrt(tc.n_A) / tc.N, lb)


def test_sigma_w_is_a_squared_singular_value():
    # dense oracle: singular values of (I - P) D^{1/2} at Zbar = 0 with bias m
    rng = np.random.default_rng(4)
    for _ in range(10):
        tc = random_tc(rng)
        w = float(rng.uniform(1, tc.r))
        p = BlockParams(0, 0, 0, 0, math.log(w) / tc.K, Regime.ZERO)
        mp = build_block_matrix(p, tc)
        P = softmax_columns(mp.Zbar, mp.bias)
        spec = tc.to_problem()
        s2 = np.linalg.svd((np.eye(tc.K) - P) * np.sqrt(spec.n), compute_uv=False) ** 2
        assert np.min(np.abs(s2 - sigma_w(w, tc))) <= 1e-9 * s2.max()


# ---------------------------------------------------------------- dispatch

def test_classify_regimes():
    lo, hi = collapse_lambdas(TC)
    assert classify_and_solve(TC, 0.5 * lo, 0.01)[0].regime == Regime.INTERIOR
    assert classify_and_solve(TC, 1.1 * hi, 0.01)[0].regime == Regime.ZERO
    assert classify_and_solve(TC, lo * (1 - 1e-6), 0.01)[0].regime == Regime.INTERIOR
    assert classify_and_solve(TC, lo * (1 + 1e-6), 0.01)[0].regime == Regime.MINORITY_COLLAPSED
    assert lo == pytest.approx(1 / 300, rel=1e-15)


def test_classify_bias_vector_and_centering():
    rng = np.random.default_rng(5)
    for _ in range(20):
        tc = random_tc(rng)
        lo, hi = collapse_lambdas(tc)
        lz = float(rng.uniform(0.3 * lo, 1.3 * hi))
        p, mp = classify_and_solve(tc, lz, 0.05)
        assert np.abs(mp.Zbar.sum(axis=0)).max() <= 1e-12 * max(1, np.abs(mp.Zbar).max())
        assert abs(mp.bias.sum()) <= 1e-12
        assert np.allclose(mp.bias[:tc.k_A], p.m * tc.k_B)


def test_boundary_tie_returns_flagged_solution():
    tc = TwoClusterSpec(3, 7, 500, 100)
    lz = lambda_star_bias_free(tc)
    with pytest.warns(UserWarning, match="boundary"):
        p, mp = classify_and_solve(tc, lz, math.inf)
    assert p.boundary and p.regime in (Regime.MINORITY_COLLAPSED, Regime.MAJORITY_ONLY)
    assert certified(mp, tc, lz, math.inf, tol=1e-6)


def test_build_block_matrix():
    K = 7
    tc = TwoClusterSpec(3, 4, 9, 2)
    mp = build_block_matrix(BlockParams(0.4, 0.4, 0.4, 0.4, 0.0, Regime.INTERIOR), tc)
    assert np.allclose(mp.Zbar, 0.4 * (K * np.eye(K) - np.ones((K, K))), atol=1e-15)
    rng = np.random.default_rng(6)
    for _ in range(20):
        p = BlockParams(*rng.normal(size=5), Regime.INTERIOR)
        mp = build_block_matrix(p, tc)
        assert np.abs(mp.Zbar.sum(axis=0)).max() <= 1e-13 and abs(mp.bias.sum()) <= 1e-13
        co = fit_block_structure(mp, tc.to_problem()).two_cluster
        assert np.allclose(co, [p.a, p.b, p.c, p.d, p.m], atol=1e-13)


def test_dual_route_grid_all_regimes():
    rng = np.random.default_rng(7)
    seen = set()
    for _ in range(5):
        tc = random_tc(rng)
        lo, hi = collapse_lambdas(tc)
        lb = float(rng.choice([0.001, 0.01, 1.0, math.inf]))
        for lz in np.geomspace(0.3 * lo, 1.5 * hi, 20):
            p, mp = classify_and_solve(tc, float(lz), lb)
            seen.add(p.regime)
            assert certified(mp, tc, float(lz), lb)
            num = solve_reduced(tc.to_problem(), RegParams(float(lz), lb)).mean_prediction
            ref = np.linalg.norm(mp.Zbar)
            d = np.linalg.norm(num.Zbar - mp.Zbar)
            assert (d / ref if ref > 0 else d) <= 1e-5
    assert len(seen) >= 3


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 6), st.integers(2, 6), st.integers(2, 150), st.floats(1.3, 8.0),
       st.floats(0.05, 1.4), st.sampled_from([0.001, 0.1, math.inf]))
def test_rank_profile_reproduces_regime(kA, kB, nB, r, frac, lb):
    tc = TwoClusterSpec(kA, kB, float(round(nB * r)), float(nB))
    lo, hi = collapse_lambdas(tc)
    lz = frac * hi if frac > 0.3 else frac / 0.3 * lo
    p, mp = classify_and_solve(tc, lz, lb)
    if p.boundary or p.regime == Regime.ZERO and lz < hi:
        return
    rA, rB, guess = rank_profile(mp, tc)
    assert guess == p.regime
    assert rB == {Regime.INTERIOR: kB, Regime.MINORITY_COLLAPSED: 1,
                  Regime.MAJORITY_ONLY: 0, Regime.ZERO: 0}[p.regime]
