"""Shared types and the cross-entropy objective of the convexified UFM.

The convex program is posed over the prediction matrix ``Z`` (K x N) and
a bias ``b``::

    (1/N) CE(Z + b 1^T, Y) + lam_Z ||Z||_* + (lam_b / 2) ||b||^2

Optimal ``Z`` has identical columns within each class, so most of the
package works with the K x K matrix of class-mean predictions ``Zbar``.
In that form the nuclear term becomes ``lam_Z ||Zbar D^{1/2}||_*`` with
``D = diag(n_1, ..., n_K)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class NumericPolicy:
    """Central tolerance record."""

    optimality: float = 1e-8
    equality: float = 1e-10
    rank_rel: float = 1e-6
    pinv_rel: float = 1e-10


POLICY = NumericPolicy()


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ProblemSpec:
    """Class sizes and derived quantities.

    Sizes are stored in non-increasing order. ``perm[i]`` is the position
    in the caller's original list of the class stored at index ``i``.
    Sizes may be non-integer: the class-mean problem only depends on them
    through ``D`` and ``N``. The full K x N solver requires integers.
    """

    class_sizes: tuple
    perm: tuple = field(init=False)

    def __post_init__(self):
        raw = [float(n) for n in self.class_sizes]
        if len(raw) < 2:
            raise InvalidArgumentError("need at least two classes")
        if not all(math.isfinite(n) and n >= 1 for n in raw):
            raise InvalidArgumentError(f"class sizes must be finite and >= 1, got {raw}")
        order = sorted(range(len(raw)), key=lambda i: (-raw[i], i))
        sizes = tuple(int(raw[i]) if raw[i].is_integer() else raw[i] for i in order)
        object.__setattr__(self, "class_sizes", sizes)
        object.__setattr__(self, "perm", tuple(order))

    @property
    def K(self) -> int:
        return len(self.class_sizes)

    @property
    def n(self) -> np.ndarray:
        return np.asarray(self.class_sizes, dtype=float)

    @property
    def N(self) -> float:
        return float(sum(self.class_sizes))

    @property
    def D(self) -> np.ndarray:
        return np.diag(self.n)

    @property
    def clusters(self) -> list:
        """Index groups of classes sharing one size, largest size first."""
        out, start = [], 0
        sizes = self.class_sizes
        for k in range(1, self.K + 1):
            if k == self.K or sizes[k] != sizes[start]:
                out.append(np.arange(start, k))
                start = k
        return out

    @property
    def is_integral(self) -> bool:
        return all(float(n).is_integer() for n in self.class_sizes)

    def labels(self) -> np.ndarray:
        """Class index of each sample column, contiguous by class."""
        if not self.is_integral:
            raise InvalidArgumentError("sample labels need integer class sizes")
        return np.repeat(np.arange(self.K), [int(n) for n in self.class_sizes])


@dataclass(frozen=True)
class RegParams:
    """Regularization weights. ``lambda_b = inf`` pins the bias at zero."""

    lambda_Z: float
    lambda_b: float = math.inf
    lambda_W: Optional[float] = None
    lambda_H: Optional[float] = None

    def __post_init__(self):
        lz, lb = float(self.lambda_Z), float(self.lambda_b)
        if not (math.isfinite(lz) and lz >= 0):
            raise InvalidArgumentError(f"lambda_Z must be finite and >= 0, got {lz}")
        if math.isnan(lb) or lb <= 0:
            raise InvalidArgumentError(f"lambda_b must be > 0 or inf, got {lb}")
        if (self.lambda_W is None) != (self.lambda_H is None):
            raise InvalidArgumentError("lambda_W and lambda_H must be given together")
        if self.lambda_W is not None:
            if self.lambda_W <= 0 or self.lambda_H <= 0:
                raise InvalidArgumentError("lambda_W and lambda_H must be positive")
            if abs(lz - math.sqrt(self.lambda_W * self.lambda_H)) > 1e-12 * lz:
                raise InvalidArgumentError("lambda_Z must equal sqrt(lambda_W * lambda_H)")
        object.__setattr__(self, "lambda_Z", lz)
        object.__setattr__(self, "lambda_b", lb)

    @classmethod
    def from_factors(cls, lambda_W: float, lambda_H: float, lambda_b: float = math.inf):
        return cls(math.sqrt(lambda_W * lambda_H), lambda_b, lambda_W, lambda_H)

    @property
    def bias_free(self) -> bool:
        return math.isinf(self.lambda_b)


@dataclass(frozen=True)
class MeanPrediction:
    """Class-mean predictions (column k is class k) and the bias."""

    Zbar: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        Z, b = _frozen(self.Zbar), _frozen(self.bias)
        if Z.ndim != 2 or Z.shape[0] != Z.shape[1] or b.shape != (Z.shape[0],):
            raise InvalidArgumentError(f"shape mismatch: Zbar {Z.shape}, bias {b.shape}")
        object.__setattr__(self, "Zbar", Z)
        object.__setattr__(self, "bias", b)


@dataclass(frozen=True)
class FullPrediction:
    """Per-sample predictions, columns grouped contiguously by class."""

    Z: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        Z, b = _frozen(self.Z), _frozen(self.bias)
        if Z.ndim != 2 or b.shape != (Z.shape[0],):
            raise InvalidArgumentError(f"shape mismatch: Z {Z.shape}, bias {b.shape}")
        object.__setattr__(self, "Z", Z)
        object.__setattr__(self, "bias", b)


# Column-stochastic matrix; kept as a plain array.
ProbabilityMatrix = np.ndarray


def _check_finite(*arrays):
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise InvalidArgumentError("non-finite input")


def softmax_columns(Zbar, bias) -> ProbabilityMatrix:
    """Column-wise softmax of ``Zbar + bias 1^T``."""
    Zbar, bias = np.asarray(Zbar, float), np.asarray(bias, float)
    _check_finite(Zbar, bias)
    X = Zbar + bias[:, None]
    X = X - X.max(axis=0, keepdims=True)
    E = np.exp(X)
    return E / E.sum(axis=0, keepdims=True)


def _log_softmax(X: np.ndarray) -> np.ndarray:
    mx = X.max(axis=0, keepdims=True)
    return X - mx - np.log(np.exp(X - mx).sum(axis=0, keepdims=True))


def _ce_columns(X: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-column ``CE(x_j, e_{t_j})``, accurate when the loss is tiny.

    Computed as ``m + log1p(sum of the other terms)`` after shifting by the
    column max, so no cancellation between logits of size ``log N`` occurs.
    """
    cols = np.arange(X.shape[1])
    D = X - X[targets, cols]
    top = D.argmax(axis=0)
    m = D[top, cols]
    E = np.exp(D - m)
    E[top, cols] = 0.0
    return m + np.log1p(E.sum(axis=0))


def _check_bias(bias, reg: RegParams):
    if reg.bias_free and np.any(bias != 0):
        raise InvalidArgumentError("nonzero bias with lambda_b = inf")


def _ridge(bias, reg: RegParams) -> float:
    return 0.0 if reg.bias_free else 0.5 * reg.lambda_b * float(bias @ bias)


def reduced_ce(mp: MeanPrediction, spec: ProblemSpec) -> float:
    """Weighted cross entropy ``(1/N) sum_k n_k CE(zbar_k + b, e_k)``."""
    K = spec.K
    if mp.Zbar.shape != (K, K):
        raise InvalidArgumentError(f"Zbar must be {K}x{K}, got {mp.Zbar.shape}")
    _check_finite(mp.Zbar, mp.bias)
    ce = _ce_columns(mp.Zbar + mp.bias[:, None], np.arange(K))
    return float((spec.n * ce).sum() / spec.N)


def reduced_objective(mp: MeanPrediction, spec: ProblemSpec, reg: RegParams) -> float:
    """Objective restricted to class-collapsed predictions ``Z = Zbar Y``."""
    _check_bias(mp.bias, reg)
    ce = reduced_ce(mp, spec)
    V = mp.Zbar * np.sqrt(spec.n)[None, :]
    nuc = np.linalg.svd(V, compute_uv=False).sum()
    return ce + reg.lambda_Z * float(nuc) + _ridge(mp.bias, reg)


def full_objective(fp: FullPrediction, spec: ProblemSpec, reg: RegParams) -> float:
    """Objective on the K x N prediction matrix."""
    labels = spec.labels()
    if fp.Z.shape != (spec.K, labels.size):
        raise InvalidArgumentError(f"Z must be {spec.K}x{labels.size}, got {fp.Z.shape}")
    _check_finite(fp.Z, fp.bias)
    _check_bias(fp.bias, reg)
    ce = _ce_columns(fp.Z + fp.bias[:, None], labels).sum() / spec.N
    nuc = np.linalg.svd(fp.Z, compute_uv=False).sum()
    return float(ce) + reg.lambda_Z * float(nuc) + _ridge(fp.bias, reg)


def smooth_gradient(mp: MeanPrediction, spec: ProblemSpec, reg: RegParams):
    """Gradient of the weighted CE plus bias ridge (nuclear term excluded).

    Returns ``((P - I) D / N, (P - I) n / N + lam_b b)``. In bias-free mode
    the ridge term is dropped and the second entry is the CE part only.
    """
    P = softmax_columns(mp.Zbar, mp.bias)
    E = (P - np.eye(spec.K)) / spec.N
    gZ = E * spec.n[None, :]
    gb = E @ spec.n
    if not reg.bias_free:
        gb = gb + reg.lambda_b * mp.bias
    return gZ, gb


@dataclass(frozen=True)
class KKTResidual:
    stationarity: float
    feasibility_margin: float
    bias_residual: float

    def as_tuple(self):
        return (self.stationarity, self.feasibility_margin, self.bias_residual)


def nuclear_kkt(V: np.ndarray, G: np.ndarray, lam: float, rank_rel: float = POLICY.rank_rel):
    """Optimality residual of ``G in lam * subdiff ||V||_*``.

    Returns (stationarity, feasibility margin). The tangent part of
    ``G - lam U W^T`` must vanish; the part on the orthogonal complement,
    divided by ``lam``, must have spectral norm at most one.
    """
    if lam == 0:
        return float(np.linalg.norm(G)), math.inf
    U, s, Wt = np.linalg.svd(V, full_matrices=False)
    r = int(np.sum(s > rank_rel * s[0])) if s.size and s[0] > 0 else 0
    Ur, Wr = U[:, :r], Wt[:r].T
    E = G - lam * Ur @ Wr.T
    UE = Ur @ (Ur.T @ E)
    EW = (E @ Wr) @ Wr.T
    tangent = UE + EW - Ur @ (Ur.T @ EW)
    Rm = G - Ur @ (Ur.T @ G)
    Rm = Rm - (Rm @ Wr) @ Wr.T
    opnorm = np.linalg.norm(Rm, 2) if Rm.size else 0.0
    return float(np.linalg.norm(tangent)), float(1.0 - opnorm / lam)


def kkt_residual(mp: MeanPrediction, spec: ProblemSpec, reg: RegParams,
                 policy: NumericPolicy = POLICY) -> KKTResidual:
    """First-order optimality residuals of ``mp``.

    The nuclear-norm condition is checked for ``V = Zbar D^{1/2}`` against
    the negative CE gradient in that variable, ``(I - P) D^{1/2} / N``.
    """
    _check_finite(mp.Zbar, mp.bias)
    P = softmax_columns(mp.Zbar, mp.bias)
    sq = np.sqrt(spec.n)
    IP = (np.eye(spec.K) - P) / spec.N
    stat, margin = nuclear_kkt(mp.Zbar * sq[None, :], IP * sq[None, :], reg.lambda_Z, policy.rank_rel)
    if reg.bias_free:
        bres = float(np.linalg.norm(mp.bias))
    else:
        bres = float(np.linalg.norm(IP @ spec.n - reg.lambda_b * mp.bias))
    return KKTResidual(stat, margin, bres)


def hessian_quadratic_form(mp: MeanPrediction, spec: ProblemSpec, deltaZ, deltaB,
                           policy: NumericPolicy = POLICY) -> float:
    """Second directional derivative of the weighted CE along ``(dZ, db)``.

    Directions must be centered: every column of ``dZ + db 1^T`` sums to 0.
    """
    dZ, db = np.asarray(deltaZ, float), np.asarray(deltaB, float)
    X = dZ + db[:, None]
    if np.max(np.abs(X.sum(axis=0)), initial=0.0) > policy.equality:
        raise InvalidArgumentError("direction is not centered (1^T (dZ + db 1^T) != 0)")
    P = softmax_columns(mp.Zbar, mp.bias)
    # x^T (diag(p) - p p^T) x per column
    q = (P * X * X).sum(axis=0) - (P * X).sum(axis=0) ** 2
    return float((spec.n * q).sum() / spec.N)


def as_mean_prediction(Zbar, bias=None) -> MeanPrediction:
    Zbar = np.asarray(Zbar, float)
    return MeanPrediction(Zbar, np.zeros(Zbar.shape[0]) if bias is None else bias)


def expand(mp: MeanPrediction, spec: ProblemSpec) -> FullPrediction:
    """Replicate each class-mean column ``n_k`` times."""
    return FullPrediction(mp.Zbar[:, spec.labels()], mp.bias)


def class_means(fp: FullPrediction, spec: ProblemSpec) -> MeanPrediction:
    labels = spec.labels()
    Zbar = np.stack([fp.Z[:, labels == k].mean(axis=1) for k in range(spec.K)], axis=1)
    return MeanPrediction(Zbar, fp.bias)

