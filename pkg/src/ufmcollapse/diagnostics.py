"""Neural-collapse metrics, block-structure fits and the large-N sweep."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Union

import numpy as np

from .core_model import POLICY, MeanPrediction, ProblemSpec
from .errors import InvalidArgumentError
from .two_cluster import Regime, TwoClusterSpec, build_block_matrix, solve_case_a


def nc1_metric(features, labels, pinv_rel: float = POLICY.pinv_rel) -> float:
    """Within-class variability ``(1/K) tr(Sigma_W Sigma_B^+)``.

    ``Sigma_W`` averages over all samples around their class means;
    ``Sigma_B`` averages over classes around the global sample mean.
    Returns ``inf`` when ``Sigma_B = 0`` but ``Sigma_W != 0``. Covariances
    below ``(64 eps max|H|)^2`` are treated as zero.
    """
    H = np.asarray(features, float)
    y = np.asarray(labels)
    if H.ndim != 2 or y.shape != (H.shape[1],):
        raise InvalidArgumentError("features must be d x N with one label per column")
    classes, y = np.unique(y, return_inverse=True)
    K, N = classes.size, H.shape[1]
    counts = np.bincount(y, minlength=K)
    means = np.stack([H[:, y == k].mean(axis=1) for k in range(K)], axis=1)
    W = H - means[:, y]
    Sw = W @ W.T / N
    B = means - H.mean(axis=1, keepdims=True)
    Sb = B @ B.T / K
    evals, evecs = np.linalg.eigh(Sb)
    top = max(evals.max(initial=0.0), 0.0)
    # covariances at the rounding level of the features count as zero
    floor = (64 * np.finfo(float).eps * np.abs(H).max(initial=0.0)) ** 2
    if np.trace(Sw) <= floor:
        return 0.0
    if top <= floor:
        return math.inf
    keep = evals > pinv_rel * top
    Sb_pinv = (evecs[:, keep] / evals[keep]) @ evecs[:, keep].T
    assert counts.min() >= 1
    return max(float(np.trace(Sw @ Sb_pinv)) / K, 0.0)


def correlation_matrix(Zbar, zero_rel: float = 1e-12) -> np.ndarray:
    """Cosine similarities between columns. Entries touching a (numerically)
    zero column are NaN."""
    Z = np.asarray(Zbar, float)
    norms = np.linalg.norm(Z, axis=0)
    bad = norms <= zero_rel * norms.max(initial=0.0)
    safe = np.where(bad, 1.0, norms)
    Theta = (Z.T @ Z) / np.outer(safe, safe)
    Theta = np.clip(Theta, -1.0, 1.0)
    Theta[bad, :] = np.nan
    Theta[:, bad] = np.nan
    np.fill_diagonal(Theta, np.where(bad, np.nan, 1.0))
    return Theta


def etf_deviation(Zbar) -> float:
    """``max_{k != l} |Theta_kl + 1/(K-1)|``; NaN if a column is zero."""
    Theta = correlation_matrix(Zbar)
    K = Theta.shape[0]
    off = Theta[~np.eye(K, dtype=bool)]
    if np.isnan(off).any():
        return math.nan
    return float(np.abs(off + 1.0 / (K - 1)).max())


class TwoClusterCoeffs(NamedTuple):
    a: float
    b: float
    c: float
    d: float
    m: float


@dataclass(frozen=True)
class BlockFit:
    diag_coeffs: np.ndarray      # a_j, per cluster
    cross_coeffs: np.ndarray     # a_{jj'}, J x J
    bias_coeffs: np.ndarray      # mean bias per cluster
    residual: float              # ||Zbar - projection||_F
    bias_residual: float
    two_cluster: Optional[TwoClusterCoeffs] = None

    def constraint_residuals(self, sizes: Sequence[int]) -> np.ndarray:
        """``a_j + sum_j' a_{j'j} |Gamma_j'|`` per cluster (zero for centered Zbar)."""
        return self.diag_coeffs + np.asarray(sizes, float) @ self.cross_coeffs


def fit_block_structure(mp: MeanPrediction, spec: ProblemSpec) -> BlockFit:
    """Project onto ``sum_j a_j I_j + sum_jj' a_jj' 1_j 1_j'^T`` by block averaging.

    For singleton clusters the split between ``a_j`` and ``a_jj`` is not
    identifiable; ``a_jj`` is set to 0 there.
    """
    Z = mp.Zbar
    if Z.shape != (spec.K, spec.K):
        raise InvalidArgumentError("Zbar shape does not match the class count")
    groups = spec.clusters
    J = len(groups)
    diag = np.zeros(J)
    cross = np.zeros((J, J))
    P = np.zeros_like(Z)
    for j, gj in enumerate(groups):
        for i, gi in enumerate(groups):
            block = Z[np.ix_(gi, gj)]
            if i != j:
                cross[i, j] = block.mean()
                P[np.ix_(gi, gj)] = cross[i, j]
                continue
            s = gj.size
            dmean = np.trace(block) / s
            if s > 1:
                cross[j, j] = (block.sum() - np.trace(block)) / (s * (s - 1))
            diag[j] = dmean - cross[j, j]
            P[np.ix_(gj, gj)] = cross[j, j] + diag[j] * np.eye(s)
    bias_c = np.array([mp.bias[g].mean() for g in groups])
    bias_fit = np.concatenate([np.full(g.size, c) for g, c in zip(groups, bias_c)])
    tc = None
    if J == 2:
        kA, kB = groups[0].size, groups[1].size
        bA, bB = mp.bias[groups[0]].sum(), mp.bias[groups[1]].sum()
        m = (kB * bA - kA * bB) / (kA * kB * (kA + kB))
        tc = TwoClusterCoeffs(-cross[0, 0] if kA > 1 else math.nan, -cross[0, 1],
                              -cross[1, 0], -cross[1, 1] if kB > 1 else math.nan, float(m))
    return BlockFit(diag, cross, bias_c, float(np.linalg.norm(Z - P)),
                    float(np.linalg.norm(mp.bias - bias_fit)), tc)


def _rank(M, scale, cutoff):
    if scale == 0 or M.size == 0:
        return 0
    s = np.linalg.svd(M, compute_uv=False)
    return int(np.sum(s > cutoff * scale))


def rank_profile(mp: MeanPrediction, spec: TwoClusterSpec, cutoff: float = POLICY.rank_rel):
    """Effective ranks of the majority and minority column blocks of Zbar,
    relative to the largest singular value of Zbar, and the regime they
    indicate (None if the pattern matches no regime)."""
    Z = mp.Zbar
    smax = float(np.linalg.norm(Z, 2))
    rA = _rank(Z[:, :spec.k_A], smax, cutoff)
    rB = _rank(Z[:, spec.k_A:], smax, cutoff)
    if rB == spec.k_B:
        guess = Regime.INTERIOR
    elif rB == 1:
        guess = Regime.MINORITY_COLLAPSED
    elif rB == 0:
        guess = Regime.MAJORITY_ONLY if rA > 0 else Regime.ZERO
    else:
        guess = None
    return rA, rB, guess


@dataclass(frozen=True)
class AsymptoticRow:
    N: float
    ratios: tuple          # (b/c, a/c, d/b)
    max_dev: float
    log_product: float     # max_dev * log N
    etf_deviation: float


def asymptotic_sweep(k_A: int, k_B: int, r: float, lam: float,
                     lambda_b_rule: Union[float, Callable[[float], float]],
                     N_grid: Sequence[float]) -> list:
    """Ratio deviations of the interior solution at fixed ``N lambda_Z = lam``.

    Class sizes are ``n_B = N/(k_A r + k_B)``, ``n_A = r n_B`` (real valued).
    Grid points with ``lam >= sqrt(n_B)`` are skipped with a warning.
    """
    rule = lambda_b_rule if callable(lambda_b_rule) else (lambda N: lambda_b_rule)
    rows = []
    for N in N_grid:
        nB = N / (k_A * r + k_B)
        if lam >= math.sqrt(nB) or nB < 1:
            warnings.warn(f"N={N:g}: lambda={lam} >= sqrt(n_B)={math.sqrt(nB):.4g}, skipped")
            continue
        spec = TwoClusterSpec(k_A, k_B, r * nB, nB)
        p = solve_case_a(spec, lam / spec.N, rule(N))
        ratios = (p.b / p.c, p.a / p.c, p.d / p.b)
        dev = max(abs(x - 1.0) for x in ratios)
        rows.append(AsymptoticRow(float(N), ratios, dev, dev * math.log(N),
                                  etf_deviation(build_block_matrix(p, spec).Zbar)))
    return rows


def convergence_slope(rows: Sequence[AsymptoticRow]) -> Optional[float]:
    """Least-squares slope of ``log max_dev`` against ``log log N``;
    about -1 for an ``O(1/log N)`` rate. None with fewer than two rows."""
    pts = [(math.log(math.log(r.N)), math.log(r.max_dev)) for r in rows if r.max_dev > 0]
    if len(pts) < 2:
        return None
    x, y = np.array(pts).T
    return float(np.polyfit(x, y, 1)[0])
