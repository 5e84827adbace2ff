"""Accelerated proximal-gradient solver for the nuclear-norm regularized
cross-entropy program, in class-mean (K x K) and per-sample (K x N) form.

Both forms are solved in scaled variables so that a single step size
suits every block:

* the nuclear-norm variable is ``V = Zbar D^{1/2}`` (reduced) or ``Z``
  (full), which makes the prox an exact singular-value shrink;
* the bias is written ``b = beta / sqrt(N)`` and the objective is
  multiplied by ``N``, so both blocks have curvature of order one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core_model import (
    POLICY,
    FullPrediction,
    KKTResidual,
    MeanPrediction,
    ProblemSpec,
    RegParams,
    _ce_columns,
    _log_softmax,
    class_means,
    kkt_residual,
    nuclear_kkt,
    reduced_objective,
    full_objective,
)
from .errors import InvalidArgumentError, NumericError

FULL_SIZE_CAP = 5000


@dataclass(frozen=True)
class SolverOptions:
    max_iterations: int = 200000
    objective_tol: float = 1e-14
    kkt_tol: float = 1e-9
    initial_step: float = 1.0
    backtracking_factor: float = 0.5
    restart: bool = True
    check_every: int = 10

    def __post_init__(self):
        if self.max_iterations < 1 or self.check_every < 1:
            raise InvalidArgumentError("iteration counts must be positive")
        if not (self.objective_tol > 0 and self.kkt_tol > 0 and self.initial_step > 0):
            raise InvalidArgumentError("tolerances and step must be positive")
        if not 0 < self.backtracking_factor < 1:
            raise InvalidArgumentError("backtracking_factor must lie in (0, 1)")


@dataclass(frozen=True)
class Solution:
    mean_prediction: MeanPrediction
    objective: float
    kkt: KKTResidual
    iterations: int
    provenance: str  # "numeric" or "analytic"
    converged: bool
    regime: Optional[str] = None
    objective_history: np.ndarray = field(default=None, repr=False)
    within_class_spread: Optional[float] = None


@dataclass(frozen=True)
class Factorization:
    W: np.ndarray
    Hbar: np.ndarray

    @property
    def d(self) -> int:
        return self.W.shape[0]


def singular_value_shrink(M, tau: float, return_sv: bool = False):
    """Prox of ``tau ||.||_*``: soft-threshold the singular values of ``M``."""
    M = np.asarray(M, float)
    if tau < 0:
        raise InvalidArgumentError("tau must be nonnegative")
    if not np.all(np.isfinite(M)):
        raise InvalidArgumentError("non-finite input")
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"SVD failed: {exc}") from exc
    s = np.maximum(s - tau, 0.0)
    r = int(np.count_nonzero(s))
    X = (U[:, :r] * s[:r]) @ Vt[:r]
    return (X, s) if return_sv else X


class _CE:
    """Scaled smooth part ``sum_j w_j CE(X_j * s_j + b, e_{y_j}) + lam_b/2 |beta|^2``."""

    def __init__(self, K, targets, weights, col_scale, N, lambda_b):
        self.K = K
        self.cols = np.arange(targets.size)
        self.targets = targets
        self.w = weights
        self.s = col_scale
        self.rootN = math.sqrt(N)
        self.lambda_b = 0.0 if math.isinf(lambda_b) else lambda_b

    def value(self, X, beta):
        A = X * self.s + (beta / self.rootN)[:, None]
        L = _log_softmax(A)
        ce = (self.w * _ce_columns(A, self.targets)).sum()
        return float(ce + 0.5 * self.lambda_b * beta @ beta), L

    def grad(self, L, beta):
        E = np.exp(L)
        E[self.targets, self.cols] -= 1.0
        E *= self.w
        gX = E * self.s
        gb = E.sum(axis=1) / self.rootN + self.lambda_b * beta
        return gX, gb


def _apg(ce: _CE, mu: float, X0, fit_bias: bool, opts: SolverOptions,
         certify: Callable, progress_scale: float):
    """Monotone FISTA with backtracking, step expansion and adaptive restart.

    ``certify(X, beta)`` returns a KKTResidual in original units; the run
    stops once it meets ``opts.kkt_tol`` and the objective has flattened,
    or once the objective stalls completely.
    """
    K = X0.shape[0]
    x, bx = X0.copy(), np.zeros(K)
    fx, Lx = ce.value(x, bx)
    Fx = fx + mu * np.linalg.svd(x, compute_uv=False).sum()
    y, by, theta = x, bx, 1.0
    t = opts.initial_step
    bf = opts.backtracking_factor
    grow = bf ** -0.25
    history = [Fx]
    slack = 64 * np.finfo(float).eps
    fresh = True  # y == x, so a prox-gradient step from y is monotone
    kkt = certify(x, bx)
    stalled = 0
    it = 0
    converged = False
    while it < opts.max_iterations:
        it += 1
        fy, Ly = (fx, Lx) if fresh else ce.value(y, by)
        gX, gb = ce.grad(Ly, by)
        if not fit_bias:
            gb = np.zeros(K)
        while True:
            xn, sv = singular_value_shrink(y - t * gX, t * mu, return_sv=True)
            bn = by - t * gb
            fn, Ln = ce.value(xn, bn)
            dX, db = xn - y, bn - by
            quad = float((gX * dX).sum() + gb @ db) + ((dX * dX).sum() + db @ db) / (2 * t)
            if fn <= fy + quad + 1e-15 * abs(fy):
                break
            t *= bf
            if t < 1e-300:
                raise NumericError("step size underflow in line search", {"iteration": it})
        Fn = fn + mu * sv.sum()
        # objective values carry rounding of order eps*|F|; below that the
        # comparison is noise and the KKT residual decides
        if Fn > Fx + slack * abs(Fx):
            if fresh:
                break  # even a plain prox-gradient step cannot descend
            y, by, theta, fresh = x, bx, 1.0, True
            continue
        restart = opts.restart and (
            float(((y - xn) * (xn - x)).sum() + (by - bn) @ (bn - bx)) > 0
        )
        theta_n = 0.5 * (1 + math.sqrt(1 + 4 * theta * theta))
        mom = 0.0 if restart else (theta - 1) / theta_n
        y = xn + mom * (xn - x)
        by = bn + mom * (bn - bx)
        theta = 1.0 if restart else theta_n
        fresh = mom == 0.0
        prev = Fx
        x, bx, fx, Lx, Fx = xn, bn, fn, Ln, Fn
        history.append(Fx)
        t *= grow
        flat = abs(prev - Fx) <= opts.objective_tol * max(abs(Fx), progress_scale)
        stalled = stalled + 1 if flat else 0
        if it % opts.check_every == 0 or stalled >= 20:
            kkt = certify(x, bx)
            ok = (kkt.stationarity <= opts.kkt_tol and kkt.bias_residual <= opts.kkt_tol
                  and kkt.feasibility_margin >= -opts.kkt_tol)
            if ok and stalled >= 20:
                converged = True
                break
            if stalled >= 200:
                break
    kkt = certify(x, bx)
    converged = converged or (kkt.stationarity <= opts.kkt_tol and kkt.bias_residual <= opts.kkt_tol
                              and kkt.feasibility_margin >= -opts.kkt_tol)
    return x, bx, it, converged, np.asarray(history)


def solve_reduced(spec: ProblemSpec, reg: RegParams, opts: SolverOptions = SolverOptions()) -> Solution:
    """Minimize over class-mean predictions ``(Zbar, b)`` from a zero start."""
    if reg.lambda_Z <= 0:
        raise InvalidArgumentError("lambda_Z must be positive: without it the minimum is not attained")
    K, N, n = spec.K, spec.N, spec.n
    sq = np.sqrt(n)
    ce = _CE(K, np.arange(K), n, 1.0 / sq, N, reg.lambda_b)
    rootN = math.sqrt(N)

    def to_mp(V, beta):
        return MeanPrediction(V / sq[None, :], beta / rootN)

    def certify(V, beta):
        return kkt_residual(to_mp(V, beta), spec, reg)

    V, beta, it, conv, hist = _apg(ce, N * reg.lambda_Z, np.zeros((K, K)), not reg.bias_free,
                                   opts, certify, progress_scale=1.0)
    mp = to_mp(V, beta)
    return Solution(mp, reduced_objective(mp, spec, reg), kkt_residual(mp, spec, reg), it,
                    "numeric", conv, objective_history=hist / N)


def full_kkt(fp: FullPrediction, spec: ProblemSpec, reg: RegParams) -> KKTResidual:
    """Optimality residuals of the per-sample problem."""
    labels = spec.labels()
    L = _log_softmax(fp.Z + fp.bias[:, None])
    G = -np.exp(L)
    G[labels, np.arange(labels.size)] += 1.0
    G /= spec.N
    stat, margin = nuclear_kkt(fp.Z, G, reg.lambda_Z)
    gsum = G.sum(axis=1)
    bres = np.linalg.norm(fp.bias) if reg.bias_free else np.linalg.norm(gsum - reg.lambda_b * fp.bias)
    return KKTResidual(stat, margin, float(bres))


def within_class_spread(fp: FullPrediction, spec: ProblemSpec) -> float:
    """``max_{k,i} ||z_{k,i} - zbar_k||`` over samples ``i`` of class ``k``."""
    labels = spec.labels()
    means = class_means(fp, spec).Zbar
    return float(np.linalg.norm(fp.Z - means[:, labels], axis=0).max())


def solve_full(spec: ProblemSpec, reg: RegParams, opts: SolverOptions = SolverOptions(),
               initial_Z=None, size_cap: int = FULL_SIZE_CAP):
    """Minimize over all ``N`` sample columns, with no within-class tying.

    ``initial_Z`` (default zero) lets callers start from an asymmetric point.
    """
    if reg.lambda_Z <= 0:
        raise InvalidArgumentError("lambda_Z must be positive")
    if not spec.is_integral:
        raise InvalidArgumentError("the per-sample problem needs integer class sizes")
    if spec.N > size_cap:
        raise InvalidArgumentError(
            f"N = {spec.N:g} exceeds the full-problem cap {size_cap}; use solve_reduced, "
            "whose optimum is the same after class-mean collapse")
    labels = spec.labels()
    K, N = spec.K, int(spec.N)
    ce = _CE(K, labels, np.ones(N), np.ones(N), N, reg.lambda_b)
    rootN = math.sqrt(N)
    X0 = np.zeros((K, N)) if initial_Z is None else np.array(initial_Z, float)
    if X0.shape != (K, N):
        raise InvalidArgumentError(f"initial_Z must be {K}x{N}")

    def certify(Z, beta):
        return full_kkt(FullPrediction(Z, beta / rootN), spec, reg)

    Z, beta, it, conv, hist = _apg(ce, N * reg.lambda_Z, X0, not reg.bias_free, opts, certify,
                                   progress_scale=1.0)
    fp = FullPrediction(Z, beta / rootN)
    sol = Solution(class_means(fp, spec), full_objective(fp, spec, reg), full_kkt(fp, spec, reg),
                   it, "numeric", conv, objective_history=hist / N,
                   within_class_spread=within_class_spread(fp, spec))
    return fp, sol


def factorize(mp: MeanPrediction, spec: ProblemSpec, rank_rel: float = POLICY.rank_rel) -> Factorization:
    """Balanced factors ``W = S^{1/2} U^T`` and ``Hbar = S^{1/2} V^T D^{-1/2}``
    from the SVD ``Zbar D^{1/2} = U S V^T``; ``W^T Hbar = Zbar``."""
    sq = np.sqrt(spec.n)
    U, s, Vt = np.linalg.svd(mp.Zbar * sq[None, :])
    r = int(np.sum(s > rank_rel * s[0])) if s[0] > 0 else 0
    rs = np.sqrt(s[:r])[:, None]
    return Factorization(rs * U[:, :r].T, rs * Vt[:r] / sq[None, :])


def landscape_certificate(f: Factorization, bias, spec: ProblemSpec, reg: RegParams) -> float:
    """``sqrt(lam_W lam_H) - ||grad of (1/N) CE at W^T Hbar Y + b 1^T||_op``.

    A nonnegative value certifies that the factored point is a global
    minimizer of the nonconvex (W, H, b) problem.
    """
    if reg.lambda_W is None:
        raise InvalidArgumentError("the certificate needs lambda_W and lambda_H")
    K = spec.K
    Zbar = f.W.T @ f.Hbar if f.d else np.zeros((K, K))
    P = np.exp(_log_softmax(Zbar + np.asarray(bias, float)[:, None]))
    # (P Y - Y) has the same singular values as (P - I) D^{1/2}
    G = (P - np.eye(K)) * np.sqrt(spec.n)[None, :] / spec.N
    return math.sqrt(reg.lambda_W * reg.lambda_H) - float(np.linalg.norm(G, 2))
