"""Semi-analytic minimizers for two clusters of classes.

Classes split into a majority cluster A (``k_A`` classes with ``n_A``
samples each) and a minority cluster B (``k_B`` classes, ``n_B < n_A``).
The optimal class-mean matrix has the block form ``B(a, b, c, d)``::

    [ a (k_A I - J) + c k_B I          -b J               ]
    [ -c J                   d (k_B I - J) + b k_A I       ]

with bias ``m (k_B 1_{k_A}; -k_A 1_{k_B})``. Which coefficients vanish
depends on ``L = N lambda_Z`` relative to ``sqrt(n_B)`` and ``sqrt(n_A)``:

* ``L <= sqrt(n_B)``: full-rank minority block (Interior); ``b, c > 0``
  while ``d`` turns negative as ``L`` nears ``sqrt(n_B)``;
* in between, the minority columns collapse to one vector
  (MinorityCollapsed) or vanish entirely (MajorityOnly), decided by the
  sign of the switching function ``xi``;
* ``L >= sqrt(n_A)``: ``Zbar = 0`` (Zero).

Each regime reduces to one or two scalar equations solved by bracketing.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .core_model import MeanPrediction, ProblemSpec, RegParams, reduced_objective
from .errors import DomainError, InvalidArgumentError, NumericError, RegimeError
from .roots import bracketed_root

XTOL = 1e-13
XI_TIE = 1e-10
_REL = 1e-12  # slack on the closed ends of regime intervals


class Regime(str, enum.Enum):
    INTERIOR = "Interior"
    MINORITY_COLLAPSED = "MinorityCollapsed"
    MAJORITY_ONLY = "MajorityOnly"
    ZERO = "Zero"


@dataclass(frozen=True)
class TwoClusterSpec:
    """Per-class sizes may be real valued; the block system only needs ratios."""

    k_A: int
    k_B: int
    n_A: float
    n_B: float

    def __post_init__(self):
        if int(self.k_A) != self.k_A or int(self.k_B) != self.k_B or self.k_A < 2 or self.k_B < 2:
            raise InvalidArgumentError("k_A and k_B must be integers >= 2")
        if not (math.isfinite(self.n_A) and self.n_A > self.n_B >= 1):
            raise InvalidArgumentError(f"need n_A > n_B >= 1, got n_A={self.n_A}, n_B={self.n_B}")

    @property
    def K(self) -> int:
        return self.k_A + self.k_B

    @property
    def N(self) -> float:
        return self.k_A * self.n_A + self.k_B * self.n_B

    @property
    def r(self) -> float:
        return self.n_A / self.n_B

    def to_problem(self) -> ProblemSpec:
        return ProblemSpec((self.n_A,) * self.k_A + (self.n_B,) * self.k_B)


@dataclass(frozen=True)
class BlockParams:
    a: float
    b: float
    c: float
    d: float
    m: float
    regime: Regime
    alpha: float = math.nan
    tau: float = math.nan
    t: float = math.nan
    boundary: bool = False


def _L(lambda_Z, spec):
    return spec.N * lambda_Z


def _check_x(x):
    if not x > 0:
        raise DomainError(f"x must be positive, got {x}", boundary=0.0)


def g1(x, lambda_Z, spec: TwoClusterSpec) -> float:
    """``log[(sqrt(n_B)/L - 1)(k_A x + k_B) + 1] - k_B log x``, for ``L <= sqrt(n_B)``."""
    _check_x(x)
    L = _L(lambda_Z, spec)
    if L > math.sqrt(spec.n_B) * (1 + _REL):
        raise DomainError("g1 needs N*lambda_Z <= sqrt(n_B)", boundary=math.sqrt(spec.n_B) / spec.N)
    s = math.sqrt(spec.n_B) / L - 1
    return math.log(s * (spec.k_A * x + spec.k_B) + 1) - spec.k_B * math.log(x)


def g2(x, lambda_Z, spec: TwoClusterSpec) -> float:
    """``log[(sqrt(n_A)/L - 1)(k_A + k_B x) + 1] - k_A log x``, for ``L <= sqrt(n_A)``."""
    _check_x(x)
    L = _L(lambda_Z, spec)
    if L > math.sqrt(spec.n_A) * (1 + _REL):
        raise DomainError("g2 needs N*lambda_Z <= sqrt(n_A)", boundary=math.sqrt(spec.n_A) / spec.N)
    s = math.sqrt(spec.n_A) / L - 1
    return math.log(s * (spec.k_A + spec.k_B * x) + 1) - spec.k_A * math.log(x)


def x2_fn(t, spec: TwoClusterSpec) -> float:
    kA, kB = spec.k_A, spec.k_B
    return kA / (math.sqrt((kB + kA * spec.n_B * t * t / spec.n_A) * spec.K) - kB)


def x1_case_a(t, spec: TwoClusterSpec) -> float:
    if t < 0:
        raise DomainError("t must be nonnegative", boundary=0.0)
    if t == 0:
        return 0.0
    kA, kB = spec.k_A, spec.k_B
    return kB / (math.sqrt((kA + spec.n_A * kB / (spec.n_B * t * t)) * spec.K) - kA)


def x1_case_b_boundary(lambda_Z, spec: TwoClusterSpec) -> float:
    """Supremum of the ``t`` domain of :func:`x1_case_b` (``inf`` if unbounded)."""
    L = _L(lambda_Z, spec)
    q = (L * spec.k_A) ** 2 / spec.K - spec.k_A * spec.n_B
    return math.sqrt(spec.k_B * spec.n_A / q) if q > 0 else math.inf


def x1_case_b(t, lambda_Z, spec: TwoClusterSpec) -> float:
    if t <= 0:
        raise DomainError("t must be positive", boundary=0.0)
    L = _L(lambda_Z, spec)
    kA, kB = spec.k_A, spec.k_B
    den = math.sqrt((kA * spec.n_B + kB * spec.n_A / (t * t)) * spec.K) / L - kA
    if den <= 0:
        raise DomainError("x1_case_b denominator is not positive",
                          boundary=x1_case_b_boundary(lambda_Z, spec))
    return kB / den


def x_case_c(t, tau, spec: TwoClusterSpec) -> float:
    if not 0 < tau:
        raise DomainError("tau must be positive", boundary=0.0)
    kA, kB = spec.k_A, spec.k_B
    den = math.sqrt((kB + t * t * kA * spec.n_B / spec.n_A) * spec.K) / tau - kB
    if den <= 0:
        raise DomainError("x_case_c denominator is not positive")
    return kA / den


def m_of_t(t, lambda_Z, lambda_b, spec: TwoClusterSpec, tau: float = 1.0) -> float:
    if math.isinf(lambda_b):
        return 0.0
    kA, kB = spec.k_A, spec.k_B
    return (lambda_Z * tau / lambda_b) * (spec.n_A - spec.n_B * t) / math.sqrt(
        (kB * spec.n_A + kA * spec.n_B * t * t) * spec.K)


def f2_fn(t, lambda_Z, lambda_b, spec: TwoClusterSpec) -> float:
    return g2(x2_fn(t, spec), lambda_Z, spec) - spec.K * spec.k_A * m_of_t(t, lambda_Z, lambda_b, spec)


def eta(lambda_Z, lambda_b, spec: TwoClusterSpec) -> float:
    return f2_fn(0.0, lambda_Z, lambda_b, spec)


def t_star(lambda_Z, lambda_b, spec: TwoClusterSpec) -> float:
    """Root of the increasing function ``f2`` when ``f2(0) < 0``, else 0."""
    if eta(lambda_Z, lambda_b, spec) >= 0:
        return 0.0
    hi = spec.r
    f = lambda t: f2_fn(t, lambda_Z, lambda_b, spec)
    while f(hi) <= 0:  # only reachable through rounding at L = sqrt(n_A)
        hi *= 2
        if hi > 1e6 * spec.r:
            raise NumericError("f2 has no sign change", {"lambda_Z": lambda_Z, "lambda_b": lambda_b})
    return bracketed_root(f, 0.0, hi, xtol=XTOL * spec.r, what="t*")


def _check_middle(lambda_Z, spec, err=DomainError):
    L = _L(lambda_Z, spec)
    if not (math.sqrt(spec.n_B) * (1 - _REL) <= L <= math.sqrt(spec.n_A) * (1 + _REL)):
        raise err(f"N*lambda_Z = {L} outside [sqrt(n_B), sqrt(n_A)]")


def xi(lambda_Z, lambda_b, spec: TwoClusterSpec) -> float:
    """Switching function between the two middle regimes.

    Negative (including ``-inf`` when ``t* = 0``) selects MinorityCollapsed,
    positive selects MajorityOnly.
    """
    _check_middle(lambda_Z, spec)
    ts = t_star(lambda_Z, lambda_b, spec)
    if ts == 0:
        return -math.inf
    L = _L(lambda_Z, spec)
    kA, kB, K = spec.k_A, spec.k_B, spec.K
    m = m_of_t(ts, lambda_Z, lambda_b, spec)
    return kB * math.exp(-K * m) - (math.sqrt((kB * spec.n_A / ts ** 2 + kA * spec.n_B) * K) / L - kA)


def xi_bias_free(lambda_Z, spec: TwoClusterSpec) -> float:
    return xi(lambda_Z, math.inf, spec)


def _ratio_root(f1, f2, hi_start):
    """Unique root of ``t = f1(t)/f2(t)``, solved in ``u = log t``.

    ``phi = f1 - t f2`` is positive for small ``t`` and negative for large
    ``t`` with a single crossing (f1 decreasing, f2 increasing).
    """
    def phi(u):
        t = math.exp(u)
        v1 = f1(t)
        if v1 == -math.inf:
            return -math.inf
        return v1 - t * f2(t)

    lo, hi = -60.0, math.log(hi_start)
    while phi(lo) <= 0:
        lo -= 60.0
        if lo < -700:
            raise NumericError("no positive lower bracket for t = f1/f2")
    while phi(hi) >= 0:
        hi += 2.0
        if hi > 700:
            raise NumericError("no negative upper bracket for t = f1/f2")
    return math.exp(bracketed_root(phi, lo, hi, xtol=XTOL, what="t = f1/f2"))


def solve_case_a(spec: TwoClusterSpec, lambda_Z, lambda_b) -> BlockParams:
    """Interior regime, ``N lambda_Z <= sqrt(n_B)``."""
    L = _L(lambda_Z, spec)
    if not 0 < L <= math.sqrt(spec.n_B) * (1 + _REL):
        raise RegimeError(f"interior regime needs 0 < N*lambda_Z <= sqrt(n_B), got {L}")
    K, kA, kB = spec.K, spec.k_A, spec.k_B
    m = lambda t: m_of_t(t, lambda_Z, lambda_b, spec)
    f1 = lambda t: g1(x1_case_a(t, spec), lambda_Z, spec) + K * kB * m(t)
    f2 = lambda t: f2_fn(t, lambda_Z, lambda_b, spec)
    t = _ratio_root(f1, f2, 10 * spec.r)
    mt = m(t)
    c = f2(t) / K
    b = f1(t) / K
    a = c + mt * K + math.log(x2_fn(t, spec))
    d = b - mt * K + math.log(x1_case_a(t, spec))
    return BlockParams(a, b, c, d, mt, Regime.INTERIOR, t=t)


def solve_case_b(spec: TwoClusterSpec, lambda_Z, lambda_b, check_xi: bool = True) -> BlockParams:
    """Minority-collapsed regime: minority columns share one vector."""
    _check_middle(lambda_Z, spec, RegimeError)
    if check_xi and xi(lambda_Z, lambda_b, spec) > XI_TIE:
        raise RegimeError("xi > 0: the minority block vanishes, use the majority-only solver")
    K, kA, kB = spec.K, spec.k_A, spec.k_B
    L = _L(lambda_Z, spec)
    m = lambda t: m_of_t(t, lambda_Z, lambda_b, spec)
    tb = x1_case_b_boundary(lambda_Z, spec)

    def f1(t):
        if t >= tb:
            return -math.inf
        try:
            x1 = x1_case_b(t, lambda_Z, spec)
        except DomainError:
            return -math.inf
        return -kB * (math.log(x1) - K * m(t))

    f2 = lambda t: f2_fn(t, lambda_Z, lambda_b, spec)
    t = _ratio_root(f1, f2, 10 * spec.r)
    mt = m(t)
    c = f2(t) / K
    b = t * c
    d = -kA * b / kB
    a = c + mt * K + math.log(x2_fn(t, spec))
    return BlockParams(a, b, c, d, mt, Regime.MINORITY_COLLAPSED, alpha=1.0 / L, t=t)


def _h_case_c(t, tau, lambda_Z, lambda_b, spec):
    x = x_case_c(t, tau, spec)
    s = math.sqrt(spec.n_A) / _L(lambda_Z, spec) - 1
    m = m_of_t(t, lambda_Z, lambda_b, spec, tau)
    return math.log(s * (spec.k_A + spec.k_B * x) + 1) - spec.k_A * math.log(x) - spec.K * spec.k_A * m


def solve_case_c(spec: TwoClusterSpec, lambda_Z, lambda_b, check_xi: bool = True) -> BlockParams:
    """Majority-only regime: minority columns vanish, ``Zbar = a(k_A I - J) (+) 0``.

    Nested solve over the certificate scale ``tau`` and the ratio ``t``.
    """
    _check_middle(lambda_Z, spec, RegimeError)
    if check_xi and xi(lambda_Z, lambda_b, spec) < -XI_TIE:
        raise RegimeError("xi < 0: the minority block collapses but survives, use the minority-collapsed solver")
    K, kA, kB = spec.K, spec.k_A, spec.k_B
    L = _L(lambda_Z, spec)
    h = lambda t, tau: _h_case_c(t, tau, lambda_Z, lambda_b, spec)
    if h(0.0, 1.0) >= 0:
        raise RegimeError("f2(0) >= 0: no majority-only solution")
    # tau*: h(0, tau) decreases from +inf (tau -> 0) to h(0, 1) < 0
    u_star = bracketed_root(lambda u: h(0.0, math.exp(u)), -700.0, 0.0, xtol=XTOL, what="tau*")
    tau_star = math.exp(u_star)

    def t_of(tau):
        if h(0.0, tau) >= 0:
            return 0.0
        hi = spec.r
        while h(hi, tau) <= 0:
            hi *= 2
            if hi > 1e12:
                raise NumericError("inner bracket for t(tau) not found", {"tau": tau})
        return bracketed_root(lambda t: h(t, tau), 0.0, hi, xtol=XTOL * spec.r, what="t(tau)")

    def outer(tau):
        t = t_of(tau)
        x = x_case_c(t, tau, spec)
        m = m_of_t(t, lambda_Z, lambda_b, spec, tau)
        return t - math.sqrt(spec.n_A) * (kA / x + kB) / (L * (kA + kB * math.exp(-K * m)))

    lo_val, hi_val = outer(tau_star), outer(1.0)
    if not (lo_val < 0 < hi_val):
        raise RegimeError(f"no majority-only solution: outer function {lo_val} at tau*={tau_star}, "
                          f"{hi_val} at tau=1")
    tau = bracketed_root(outer, tau_star, 1.0, xtol=XTOL, what="tau")
    t = t_of(tau)
    x = x_case_c(t, tau, spec)
    m = m_of_t(t, lambda_Z, lambda_b, spec, tau)
    a = math.log(x) + K * m
    return BlockParams(a, 0.0, 0.0, 0.0, m, Regime.MAJORITY_ONLY, alpha=1.0 / L, tau=tau, t=t)


def sigma_w(w, spec: TwoClusterSpec) -> float:
    """Squared singular value of ``(I - P) D^{1/2}`` along the cluster-contrast
    direction at ``Zbar = 0``, with ``w = exp(K m)``. The remaining nonzero
    squared singular values are ``n_A`` and ``n_B``."""
    kA, kB = spec.k_A, spec.k_B
    return spec.K * (kB * spec.n_A + kA * spec.n_B * w * w) / (kB + kA * w) ** 2


def solve_case_d(spec: TwoClusterSpec, lambda_Z, lambda_b) -> BlockParams:
    """Complete collapse, ``N lambda_Z >= sqrt(n_A)``: only the bias survives."""
    L = _L(lambda_Z, spec)
    if L < math.sqrt(spec.n_A) * (1 - _REL):
        raise RegimeError(f"zero regime needs N*lambda_Z >= sqrt(n_A), got {L}")
    K, kA, kB = spec.K, spec.k_A, spec.k_B
    if math.isinf(lambda_b):
        w = 1.0
    else:
        F = lambda w: (spec.n_A - spec.n_B * w) / (kB + kA * w) - spec.N * lambda_b * math.log(w) / K
        w = bracketed_root(F, 1.0, spec.r, xtol=XTOL, what="w")
    if sigma_w(w, spec) > spec.n_A * (1 + 1e-12):
        raise NumericError("zero solution fails the subgradient bound", {"w": w})
    return BlockParams(0.0, 0.0, 0.0, 0.0, math.log(w) / K, Regime.ZERO, alpha=1.0 / L)


def build_block_matrix(params: BlockParams, spec: TwoClusterSpec) -> MeanPrediction:
    kA, kB = spec.k_A, spec.k_B
    a, b, c, d, m = params.a, params.b, params.c, params.d, params.m
    IA, JA = np.eye(kA), np.ones((kA, kA))
    IB, JB = np.eye(kB), np.ones((kB, kB))
    Z = np.block([
        [a * (kA * IA - JA) + c * kB * IA, -b * np.ones((kA, kB))],
        [-c * np.ones((kB, kA)), d * (kB * IB - JB) + b * kA * IB],
    ])
    bias = m * np.concatenate([np.full(kA, float(kB)), np.full(kB, -float(kA))])
    return MeanPrediction(Z, bias)


def _objective(params, spec, lambda_Z, lambda_b):
    return reduced_objective(build_block_matrix(params, spec), spec.to_problem(),
                             RegParams(lambda_Z, lambda_b))


def classify_and_solve(spec: TwoClusterSpec, lambda_Z, lambda_b):
    """Dispatch on the regime thresholds and return ``(params, mean_prediction)``.

    When ``|xi| <= 1e-10`` both middle solvers run and the lower objective
    wins; the result carries ``boundary=True`` and a warning is issued.
    """
    if not lambda_Z > 0:
        raise InvalidArgumentError("lambda_Z must be positive")
    L = _L(lambda_Z, spec)
    if L <= math.sqrt(spec.n_B):
        p = solve_case_a(spec, lambda_Z, lambda_b)
    elif L >= math.sqrt(spec.n_A):
        p = solve_case_d(spec, lambda_Z, lambda_b)
    else:
        s = xi(lambda_Z, lambda_b, spec)
        if abs(s) <= XI_TIE:
            cands = []
            for solver in (solve_case_b, solve_case_c):
                try:
                    q = solver(spec, lambda_Z, lambda_b, check_xi=False)
                except (RegimeError, NumericError):
                    continue
                cands.append((_objective(q, spec, lambda_Z, lambda_b), q))
            if not cands:
                raise NumericError("neither middle-regime solver succeeded at xi ~ 0", {"xi": s})
            best = min(cands, key=lambda c: c[0])[1]
            warnings.warn(f"xi = {s:.3g} at the MinorityCollapsed/MajorityOnly boundary; "
                          f"reporting the lower-objective {best.regime.value} solution")
            p = BlockParams(**{**best.__dict__, "boundary": True})
        elif s < 0:
            p = solve_case_b(spec, lambda_Z, lambda_b, check_xi=False)
        else:
            p = solve_case_c(spec, lambda_Z, lambda_b, check_xi=False)
    return p, build_block_matrix(p, spec)
