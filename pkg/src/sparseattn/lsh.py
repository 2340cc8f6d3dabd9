"""Hamming-sorted LSH: random-hyperplane sign bits ordered by inverse Gray code.

Bucket ids adjacent as integers decode to sign patterns that differ in exactly
one hyperplane, so sorting rows by bucket places near-collisions next to each
other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeMismatch
from .tensor import DenseMatrix, RngSpec, as_matrix

MAX_BITS = 30


def gray_encode(g):
    """Bucket id -> sign pattern (as an integer bit-string)."""
    g = np.asarray(g, dtype=np.int64)
    return g ^ (g >> 1)


def gray_decode(bits):
    """Sign pattern -> bucket id (inverse Gray code)."""
    b = np.array(bits, dtype=np.int64, copy=True)
    shift = 1
    while shift < MAX_BITS + 2:
        b ^= b >> shift
        shift <<= 1
    return b


@dataclass(frozen=True)
class LshHasher:
    r_bits: int
    hyperplanes: np.ndarray
    seed: int

    @property
    def d(self) -> int:
        return self.hyperplanes.shape[1]

    def sign_bits(self, m) -> np.ndarray:
        m = as_matrix(m, "M")
        if m.shape[1] != self.d:
            raise ShapeMismatch(f"rows have width {m.shape[1]}, hasher expects {self.d}")
        signs = (m @ self.hyperplanes.T) >= 0.0
        weights = np.int64(1) << np.arange(self.r_bits, dtype=np.int64)
        return signs.astype(np.int64) @ weights

    def hash_rows(self, m) -> np.ndarray:
        return gray_decode(self.sign_bits(m))


def build_hasher(d: int, r_bits: int, seed: int) -> LshHasher:
    if not 1 <= r_bits <= MAX_BITS:
        raise DomainError(f"r_bits must lie in [1, {MAX_BITS}], got {r_bits}")
    if d < 1:
        raise DomainError(f"d must be >= 1, got {d}")
    planes = RngSpec(seed).generator().standard_normal((r_bits, d))
    planes.setflags(write=False)
    return LshHasher(r_bits=r_bits, hyperplanes=planes, seed=seed)


def hash_vector(h: LshHasher, x) -> int:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != h.d:
        raise ShapeMismatch(f"vector has length {x.size}, hasher expects {h.d}")
    return int(h.hash_rows(x.reshape(1, -1))[0])


@dataclass(frozen=True)
class Permutation:
    """``forward[i]`` is the new position of row ``i``."""

    forward: np.ndarray

    def __post_init__(self):
        f = np.asarray(self.forward, dtype=np.int64).reshape(-1)
        if not np.array_equal(np.sort(f), np.arange(f.size)):
            raise DomainError("forward is not a bijection on [0, n)")
        f.setflags(write=False)
        object.__setattr__(self, "forward", f)

    def __len__(self) -> int:
        return self.forward.size

    @property
    def order(self) -> np.ndarray:
        """``order[pos]`` is the original row placed at ``pos``."""
        inv = np.empty_like(self.forward)
        inv[self.forward] = np.arange(self.forward.size)
        return inv

    @classmethod
    def identity(cls, n: int) -> "Permutation":
        return cls(np.arange(n))

    def __eq__(self, other):
        return isinstance(other, Permutation) and np.array_equal(self.forward, other.forward)

    def __hash__(self):
        return hash(self.forward.tobytes())


def invert_permutation(p: Permutation) -> Permutation:
    return Permutation(p.order)


def apply_permutation(p: Permutation, m) -> DenseMatrix:
    m = np.asarray(m)
    if m.shape[0] != len(p):
        raise ShapeMismatch(f"permutation has length {len(p)}, matrix has {m.shape[0]} rows")
    return np.ascontiguousarray(m[p.order])


def sort_permutation(h: LshHasher, m) -> Permutation:
    """Stable sort of rows by bucket id; ties keep original index order."""
    buckets = h.hash_rows(m)
    order = np.argsort(buckets, kind="stable")
    forward = np.empty_like(order)
    forward[order] = np.arange(order.size)
    return Permutation(forward)
