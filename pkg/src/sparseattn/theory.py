"""Closed-form sparsity theory for attention under Gaussian inputs.

Weight constants (R, b), the log-normal CDF ``p(x)``, the lower bound on the
probability that a softmax row is (eps, k)-sparse, the admissible error edge
``eps_b`` and the scale coefficient ``alpha``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr

from .errors import DomainError, ShapeMismatch
from .tensor import DenseMatrix, LayerNormParams, as_matrix

# 4 * 0.9999: the constant that makes 0.25 * C(n, k) * p(x)^(n-k) equal 0.9999.
SPARSE_CONSTANT = 3.9996
DEFAULT_DELTA = 1.0

_TWO_OVER_SQRT_PI = 2.0 / math.sqrt(math.pi)
_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SparsityProfile:
    r1: float
    r2: float
    r3: float
    b: float

    @property
    def r_total(self) -> float:
        return self.r1 + self.r2 + self.r3


@dataclass(frozen=True)
class SparsityEstimate:
    n: int
    k: int
    delta: float
    eps_b: float
    eps: float
    alpha: float

    def __post_init__(self):
        if not 0 < self.k <= self.n / 2:
            raise DomainError(f"need 0 < k <= n/2, got n={self.n}, k={self.k}")
        if not 0 < self.delta <= 1:
            raise DomainError(f"delta must lie in (0, 1], got {self.delta}")
        if not 0 < self.eps < 1 or (self.n - self.k) * self.eps >= 1:
            raise DomainError(f"eps={self.eps} violates (n-k)*eps < 1")
        if not (math.isfinite(self.alpha) and self.alpha >= 1):
            raise DomainError(f"alpha must be finite and >= 1, got {self.alpha}")


def effective_weight(w_q, w_k) -> DenseMatrix:
    """``W_Q W_K^T / sqrt(d)``."""
    w_q = as_matrix(w_q, "w_q")
    w_k = as_matrix(w_k, "w_k")
    d = w_q.shape[0]
    if w_q.shape != (d, d) or w_k.shape != (d, d):
        raise ShapeMismatch(f"need equal square weights, got {w_q.shape} and {w_k.shape}")
    return (w_q @ w_k.T) / math.sqrt(d)


def compute_profile(w, params: LayerNormParams) -> SparsityProfile:
    w = as_matrix(w, "W")
    d = params.d
    if w.shape != (d, d):
        raise ShapeMismatch(f"W is {w.shape} but layer norm params have length {d}")
    g, beta = params.gamma, params.beta
    gwg = g[:, None] * w * g[None, :]
    gwb = g * (w @ beta)
    bwg = (beta @ w) * g
    return SparsityProfile(
        r1=float(np.sum(gwg * gwg)),
        r2=float(gwb @ gwb),
        r3=float(bwg @ bwg),
        b=float(beta @ w @ beta),
    )


def _erf_inv_guess(y: float) -> float:
    # Giles' single-precision rational approximation; refined by Newton below.
    w = -math.log((1.0 - y) * (1.0 + y))
    if w < 5.0:
        w -= 2.5
        p = 2.81022636e-08
        for c in (3.43273939e-07, -3.5233877e-06, -4.39150654e-06, 0.00021858087,
                  -0.00125372503, -0.00417768164, 0.246640727, 1.50140941):
            p = c + p * w
    else:
        w = math.sqrt(w) - 3.0
        p = -0.000200214257
        for c in (0.000100950558, 0.00134934322, -0.00367342844, 0.00573950773,
                  -0.0076224613, 0.00943887047, 1.00167406, 2.83297682):
            p = c + p * w
    return p * y


def erf_inv(y: float) -> float:
    """Inverse error function on (-1, 1), accurate to ~1 ulp.

    Newton steps run on ``erf`` near zero and on ``erfc`` against the exact
    complement ``1 - |y|`` in the upper half, which keeps the tails accurate.
    """
    y = float(y)
    if not abs(y) < 1.0:
        raise DomainError(f"erf_inv needs |y| < 1, got {y}")
    if y == 0.0:
        return 0.0
    sign = 1.0 if y > 0 else -1.0
    a = abs(y)
    x = _erf_inv_guess(a)
    use_erfc = a > 0.5
    target = 1.0 - a  # exact for a in [0.5, 1)
    for _ in range(10):
        if use_erfc:
            resid = target - math.erfc(x)
        else:
            resid = math.erf(x) - a
        step = resid / (_TWO_OVER_SQRT_PI * math.exp(-x * x))
        x -= step
        if abs(step) <= 1e-16 * abs(x):
            break
    return sign * x


def p_of(x: float, r: float) -> float:
    """``Pr[exp(U) <= x]`` for ``U ~ N(0, R)``: ``(erf(ln x / sqrt(2R)) + 1) / 2``."""
    if x <= 0 or r <= 0:
        raise DomainError(f"p_of needs x > 0 and R > 0, got x={x}, R={r}")
    return 0.5 * math.erfc(-math.log(x) / math.sqrt(2.0 * r))


def log_binom(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def golden_max(f, lo: float, hi: float, tol: float = 1e-9, max_iter: int = 500):
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns ``(argmax, max)``."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a < tol:
            break
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    best = [(fc, c), (fd, d), (f(a), a), (f(b), b)]
    fx, x = max(best)
    return x, fx


def _check_nk(n: int, k: int):
    if n < 2 or not 0 < k <= n / 2:
        raise DomainError(f"need 0 < k <= n/2, got n={n}, k={k}")


def sparse_log_objective(t: float, n: int, k: int, r: float, eps: float) -> float:
    """Log of ``C(n,k) k (1 - p(x/eps)) p(x/eps)^(k-1) p(x)^(n-k)`` at ``x = e^t``."""
    s = math.sqrt(r)
    u = (t - math.log(eps)) / s
    return float(
        log_binom(n, k)
        + math.log(k)
        + log_ndtr(-u)
        + (k - 1) * log_ndtr(u)
        + (n - k) * log_ndtr(t / s)
    )


def sparse_search_bracket(r: float, eps: float) -> tuple[float, float]:
    # Widened on the left by ln(1/eps) so the p(x/eps) transition is always inside.
    s = math.sqrt(r)
    return -12.0 * s - math.log(1.0 / eps), 12.0 * s


def p_sparse_lower_bound(n: int, k: int, r: float, eps: float) -> float:
    """Lower bound on the probability that a softmax row is (eps, k)-sparse.

    The objective is concave in ``t = ln x`` (a sum of log-normal-CDF terms), so a
    golden-section search finds the maximum; the result is clipped to [0, 1].
    """
    _check_nk(n, k)
    if r <= 0:
        raise DomainError(f"R must be > 0, got {r}")
    if not 0 < eps < 1:
        raise DomainError(f"eps must lie in (0, 1), got {eps}")
    lo, hi = sparse_search_bracket(r, eps)
    _, best = golden_max(lambda t: sparse_log_objective(t, n, k, r, eps), lo, hi)
    return math.exp(min(best, 0.0))


def eps_b(n: int, k: int, r: float) -> float:
    """Smallest error for which a softmax row is (eps, k)-sparse with probability >= 0.9999."""
    if k < 3:
        raise DomainError(
            f"eps_b is undefined for k={k}: erf_inv((k-2)/k) needs k >= 3"
        )
    _check_nk(n, k)
    if r <= 0:
        raise DomainError(f"R must be > 0, got {r}")
    log_root = (math.log(SPARSE_CONSTANT) - log_binom(n, k)) / (n - k)
    inner = 1.0 + 2.0 * math.expm1(log_root)
    if not -1.0 < inner < 1.0:
        raise DomainError(f"erf_inv argument {inner} left (-1, 1) for n={n}, k={k}")
    gap = erf_inv((k - 2) / k) - erf_inv(inner)
    return math.exp(-math.sqrt(2.0 * r) * gap)


def estimate_eps(n: int, k: int, r: float, delta: float = DEFAULT_DELTA) -> SparsityEstimate:
    """Bundle ``eps = min(eps_b, 1/(n-k+delta))`` and ``alpha = 1/(1-(n-k) eps)``."""
    if not 0 < delta <= 1:
        raise DomainError(f"delta must lie in (0, 1], got {delta}")
    eb = eps_b(n, k, r)
    eps = min(eb, 1.0 / (n - k + delta))
    alpha = 1.0 / (1.0 - (n - k) * eps)
    return SparsityEstimate(n=n, k=k, delta=delta, eps_b=eb, eps=eps, alpha=alpha)
