"""LSH-blocked sparse attention with scale coefficient, plus the ideal truncated oracle."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeMismatch
from .lsh import LshHasher, Permutation, apply_permutation, invert_permutation, sort_permutation
from .tensor import DenseMatrix, _check_qkv, as_matrix, logit_scale
from .theory import SparsityEstimate


@dataclass(frozen=True)
class BlockPlan:
    n: int
    block: int
    p_q: Permutation
    p_k: Permutation

    def __post_init__(self):
        if not 0 < self.block <= self.n:
            raise DomainError(f"block size must lie in (0, n], got {self.block} for n={self.n}")
        if len(self.p_q) != self.n or len(self.p_k) != self.n:
            raise ShapeMismatch("permutation lengths must equal n")

    @property
    def num_blocks(self) -> int:
        return -(-self.n // self.block)

    def spans(self):
        """Row ranges ``[lo, hi)`` in sorted order; the last block may be short."""
        for lo in range(0, self.n, self.block):
            yield lo, min(lo + self.block, self.n)

    @classmethod
    def from_hasher(cls, q, k, block: int, lsh: LshHasher) -> "BlockPlan":
        return cls(n=q.shape[0], block=block, p_q=sort_permutation(lsh, q), p_k=sort_permutation(lsh, k))


def _block_attention(qb, kb, vb, scale: float, alpha: float):
    logits = (qb @ kb.T) * scale
    a = np.exp(logits - logits.max(axis=1, keepdims=True))
    return (a @ vb) / (alpha * a.sum(axis=1, keepdims=True))


def blocked_attention(q, k, v, plan: BlockPlan, alpha: float = 1.0, scaled: bool = True,
                      workers: int = 1) -> DenseMatrix:
    """Per-block ``(alpha diag(A 1))^-1 A V`` on the sorted rows, then un-permuted.

    Blocks are independent; ``workers > 1`` runs them on a thread pool with the
    same per-block arithmetic, so the result does not depend on ``workers``.
    """
    q, k, v = _check_qkv(q, k, v)
    n = q.shape[0]
    if k.shape[0] != n or plan.n != n:
        raise ShapeMismatch(f"Q, K, V and the plan must share n; got {q.shape[0]}, {k.shape[0]}, {plan.n}")
    if not (math.isfinite(alpha) and alpha > 0):
        raise DomainError(f"alpha must be finite and positive, got {alpha}")
    scale = logit_scale(q.shape[1], scaled)
    qs = apply_permutation(plan.p_q, q)
    ks = apply_permutation(plan.p_k, k)
    vs = apply_permutation(plan.p_k, v)
    spans = list(plan.spans())

    def run(span):
        lo, hi = span
        return _block_attention(qs[lo:hi], ks[lo:hi], vs[lo:hi], scale, alpha)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run, spans))
    else:
        parts = [run(s) for s in spans]
    return apply_permutation(invert_permutation(plan.p_q), np.vstack(parts))


def sparse_attention(q, k, v, est: SparsityEstimate, lsh: LshHasher, scaled: bool = True,
                     alpha: float | None = None, workers: int = 1) -> DenseMatrix:
    """LSH-sorted block-diagonal attention with block size ``est.k``.

    ``alpha`` overrides ``est.alpha``; pass 1.0 for the uncorrected baseline.
    """
    q, k, v = _check_qkv(q, k, v)
    if est.n != q.shape[0]:
        raise ShapeMismatch(f"estimate is for n={est.n}, inputs have n={q.shape[0]}")
    plan = BlockPlan.from_hasher(q, k, est.k, lsh)
    return blocked_attention(q, k, v, plan, alpha=est.alpha if alpha is None else alpha,
                             scaled=scaled, workers=workers)


@dataclass(frozen=True)
class IdealSparseResult:
    t: DenseMatrix
    a_tilde_row_mass: np.ndarray  # row-max-shifted units, same as d_exact
    d_exact: np.ndarray
    kept_counts: np.ndarray
    alpha: float

    def hypothesis_rows(self, k: int) -> np.ndarray:
        """Rows with at most ``k`` normalized entries above eps, i.e. (eps, k)-sparse rows."""
        return self.kept_counts <= k


def ideal_sparse_attention(q, k, v, eps: float, k_sparse: int, scaled: bool = True) -> IdealSparseResult:
    """Exact attention with entries ``A_ij <= D_ii eps`` dropped and ``D~ = alpha A~ 1``.

    Materializes the n x n matrix. A row with nothing kept has ``A~ = 0`` and its
    output row is defined as zero.
    """
    q, k, v = _check_qkv(q, k, v)
    n = k.shape[0]
    if not 0 < eps < 1 or not 0 <= k_sparse <= n or (n - k_sparse) * eps >= 1:
        raise DomainError(f"need eps in (0,1), 0 <= k <= n and (n-k)*eps < 1; got eps={eps}, k={k_sparse}, n={n}")
    alpha = 1.0 / (1.0 - (n - k_sparse) * eps)
    logits = (q @ k.T) * logit_scale(q.shape[1], scaled)
    a = np.exp(logits - logits.max(axis=1, keepdims=True))
    d = a.sum(axis=1)
    keep = a > d[:, None] * eps
    a_tilde = np.where(keep, a, 0.0)
    mass = a_tilde.sum(axis=1)
    d_tilde = alpha * mass
    t = np.zeros((q.shape[0], v.shape[1]))
    ok = mass > 0
    t[ok] = (a_tilde[ok] @ v) / d_tilde[ok, None]
    return IdealSparseResult(t=t, a_tilde_row_mass=mass, d_exact=d,
                             kept_counts=keep.sum(axis=1), alpha=alpha)


@dataclass(frozen=True)
class ErrorReport:
    l2: float
    linf: float
    bound: float
    within_bound: bool


def error_report(ref, approx, n: int, k: int, eps: float, v) -> ErrorReport:
    ref = as_matrix(ref, "ref")
    approx = as_matrix(approx, "approx")
    if ref.shape != approx.shape:
        raise ShapeMismatch(f"ref {ref.shape} and approx {approx.shape} differ")
    diff = ref - approx
    l2 = float(np.sqrt(np.sum(diff * diff)))
    linf = float(np.max(np.abs(diff)))
    bound = (n - k) * eps * float(np.max(np.abs(v)))
    return ErrorReport(l2=l2, linf=linf, bound=bound, within_bound=linf <= bound)
