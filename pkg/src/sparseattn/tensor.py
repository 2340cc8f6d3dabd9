"""Dense float64 substrate: sampling, layer norm, softmax and exact attention.

Matrices are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. Every other module is checked against the routines here.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateRow, DomainError, ShapeMismatch

DenseMatrix = np.ndarray

VAR_FLOOR = 1e-12

# Rows of the logit matrix materialized at once by exact_attention.
ROW_TILE = 512


@dataclass(frozen=True)
class RngSpec:
    """Counter-based random stream: ``(seed, stream)`` fully determines the draws."""

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.Philox(ss))

    def substream(self, stream: int) -> "RngSpec":
        return RngSpec(self.seed, stream)


@dataclass(frozen=True)
class LayerNormParams:
    gamma: np.ndarray
    beta: np.ndarray

    def __post_init__(self):
        gamma = np.ascontiguousarray(self.gamma, dtype=np.float64).reshape(-1)
        beta = np.ascontiguousarray(self.beta, dtype=np.float64).reshape(-1)
        if gamma.size < 1 or gamma.shape != beta.shape:
            raise ShapeMismatch(
                f"gamma and beta must have equal length >= 1, got {gamma.size} and {beta.size}"
            )
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "beta", beta)

    @property
    def d(self) -> int:
        return self.gamma.size

    @classmethod
    def constant(cls, d: int, gamma: float = 1.0, beta: float = 0.0) -> "LayerNormParams":
        return cls(np.full(d, float(gamma)), np.full(d, float(beta)))


def as_matrix(m, name: str = "matrix") -> DenseMatrix:
    """Coerce to a finite 2-D C-ordered float64 array."""
    arr = np.ascontiguousarray(m, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeMismatch(f"{name} must be a non-empty 2-D matrix, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise DomainError(f"{name} contains non-finite entries")
    return arr


def sample_gaussian_matrix(n: int, d: int, mean: float, std: float, rng: RngSpec) -> DenseMatrix:
    if n < 1 or d < 1:
        raise DomainError(f"n and d must be >= 1, got n={n}, d={d}")
    if std < 0:
        raise DomainError(f"std must be >= 0, got {std}")
    z = rng.generator().standard_normal((n, d))
    return np.ascontiguousarray(mean + std * z)


def layer_norm(x, params: LayerNormParams, strict: bool = False) -> DenseMatrix:
    """Row-wise layer normalization with 1/d variance.

    A row whose variance is below ``VAR_FLOOR`` is divided by ``sqrt(var + VAR_FLOOR)``,
    or rejected with :class:`DegenerateRow` when ``strict`` is set.
    """
    x = as_matrix(x, "X")
    d = x.shape[1]
    if d != params.d:
        raise ShapeMismatch(f"X has {d} columns but layer norm params have length {params.d}")
    if d < 2:
        raise DomainError("layer norm needs d >= 2")
    centered = x - x.mean(axis=1, keepdims=True)
    var = np.mean(centered * centered, axis=1, keepdims=True)
    if strict and (var < VAR_FLOOR).any():
        bad = int(np.flatnonzero(var.ravel() < VAR_FLOOR)[0])
        raise DegenerateRow(f"row {bad} has variance {var[bad, 0]:.3g} < {VAR_FLOOR}")
    return centered / np.sqrt(var + VAR_FLOOR) * params.gamma + params.beta


def softmax(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if not np.isfinite(x).all():
        raise DomainError("softmax input must be finite")
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def _check_qkv(q, k, v):
    q, k, v = as_matrix(q, "Q"), as_matrix(k, "K"), as_matrix(v, "V")
    if q.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"Q and K widths differ: {q.shape} vs {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeMismatch(f"K and V row counts differ: {k.shape} vs {v.shape}")
    return q, k, v


def logit_scale(d: int, scaled: bool) -> float:
    return 1.0 / math.sqrt(d) if scaled else 1.0


def exact_attention(q, k, v, scaled: bool = True) -> DenseMatrix:
    """Dense ``D^-1 A V`` with ``A = exp(Q K^T [/ sqrt(d)])``.

    The exponential is taken after subtracting each row's max; rows are processed
    in fixed tiles so memory stays O(ROW_TILE * n).
    """
    q, k, v = _check_qkv(q, k, v)
    scale = logit_scale(q.shape[1], scaled)
    out = np.empty((q.shape[0], v.shape[1]))
    kt = np.ascontiguousarray(k.T)
    for lo in range(0, q.shape[0], ROW_TILE):
        logits = (q[lo:lo + ROW_TILE] @ kt) * scale
        a = np.exp(logits - logits.max(axis=1, keepdims=True))
        out[lo:lo + ROW_TILE] = (a @ v) / a.sum(axis=1, keepdims=True)
    return out


def attention_weights(q, k, scaled: bool = True) -> np.ndarray:
    """Full row-stochastic matrix ``D^-1 A`` (materializes n x n; small n only)."""
    q = as_matrix(q, "Q")
    k = as_matrix(k, "K")
    if q.shape[1] != k.shape[1]:
        raise ShapeMismatch(f"Q and K widths differ: {q.shape} vs {k.shape}")
    return softmax((q @ k.T) * logit_scale(q.shape[1], scaled))


def is_eps_k_sparse(u, eps: float, k: int) -> bool:
    """True iff at least ``n - k`` entries satisfy ``|u_i| <= eps``."""
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    n = u.size
    if not 0 <= k <= n:
        raise DomainError(f"k must lie in [0, {n}], got {k}")
    return int(np.count_nonzero(np.abs(u) <= eps)) >= n - k


def count_small(rows, eps: float) -> np.ndarray:
    """Per-row count of entries with ``|u| <= eps`` (vectorized sparsity predicate)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    return np.count_nonzero(np.abs(rows) <= eps, axis=1)
