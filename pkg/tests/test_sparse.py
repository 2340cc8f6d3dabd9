import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparseattn.errors import DomainError, ShapeMismatch
from sparseattn.lsh import Permutation, build_hasher, sort_permutation
from sparseattn.sparse import (BlockPlan, blocked_attention, error_report, ideal_sparse_attention,
                               sparse_attention)
from sparseattn.tensor import exact_attention
from sparseattn.theory import SparsityEstimate, estimate_eps


def make_estimate(n, k, eps):
    alpha = 1.0 / (1.0 - (n - k) * eps)
    return SparsityEstimate(n=n, k=k, delta=1.0, eps_b=eps, eps=eps, alpha=alpha)


def perm_matrix(p: Permutation) -> np.ndarray:
    """P with (P M)[forward[i]] = M[i]."""
    n = len(p)
    m = np.zeros((n, n))
    m[p.forward, np.arange(n)] = 1.0
    return m


def straight_line_reference(q, k, v, est, lsh):
    """Dense masks and explicit permutation matrices; no slicing tricks."""
    n, d = q.shape
    pq = perm_matrix(sort_permutation(lsh, q))
    pk = perm_matrix(sort_permutation(lsh, k))
    qs, ks, vs = pq @ q, pk @ k, pk @ v
    block_id = np.arange(n) // est.k
    mask = (block_id[:, None] == block_id[None, :]).astype(float)
    a = np.exp(qs @ ks.T / math.sqrt(d)) * mask
    dinv = np.diag(1.0 / (est.alpha * a.sum(axis=1)))
    return pq.T @ (dinv @ a @ vs)


def block_weight_row_sums(q, k, plan, alpha):
    """Per-row sums of the block weights, via the V = identity-on-columns trick."""
    n = q.shape[0]
    return blocked_attention(q, k, np.ones((n, 1)), plan, alpha=alpha)[:, 0]


@pytest.fixture
def qkv():
    rng = np.random.default_rng(12)
    return tuple(rng.normal(size=(8, 2)) for _ in range(3))


class TestSparseAttention:
    def test_matches_straight_line_reference(self, qkv):
        q, k, v = qkv
        est = make_estimate(8, 4, 0.05)
        lsh = build_hasher(2, 3, seed=9)
        out = sparse_attention(q, k, v, est, lsh)
        np.testing.assert_allclose(out, straight_line_reference(q, k, v, est, lsh), rtol=0, atol=1e-12)

    def test_ones_value_gives_inverse_alpha(self, qkv):
        q, k, _ = qkv
        est = make_estimate(8, 4, 0.1)
        out = sparse_attention(q, k, np.ones((8, 3)), est, build_hasher(2, 3, 1))
        np.testing.assert_allclose(out, 1.0 / est.alpha, rtol=0, atol=1e-12)
        assert 1.0 / est.alpha == pytest.approx(0.6, abs=1e-12)

    @settings(max_examples=25)
    @given(st.integers(6, 80), st.integers(0, 2**32 - 1), st.floats(0.0, 0.9))
    def test_block_row_sums(self, n, seed, frac):
        rng = np.random.default_rng(seed)
        q, k = 2 * rng.normal(size=(n, 5)), 2 * rng.normal(size=(n, 5))
        block = max(1, n // 3)
        eps = frac / (n - block)
        plan = BlockPlan.from_hasher(q, k, block, build_hasher(5, 4, seed))
        alpha = 1.0 / (1.0 - (n - block) * eps)
        sums = block_weight_row_sums(q, k, plan, alpha)
        assert np.max(np.abs(sums - 1.0 / alpha)) <= 1e-12

    def test_half_blocks_without_alpha_are_blockwise_exact(self):
        rng = np.random.default_rng(3)
        q, k, v = (rng.normal(size=(10, 4)) for _ in range(3))
        ident = Permutation.identity(10)
        out = blocked_attention(q, k, v, BlockPlan(10, 5, ident, ident), alpha=1.0)
        for lo in (0, 5):
            sl = slice(lo, lo + 5)
            np.testing.assert_allclose(out[sl], exact_attention(q[sl], k[sl], v[sl]), atol=1e-14)

    def test_single_block_is_exact(self):
        rng = np.random.default_rng(4)
        q, k, v = (rng.normal(size=(9, 3)) for _ in range(3))
        plan = BlockPlan.from_hasher(q, k, 9, build_hasher(3, 4, 0))
        np.testing.assert_allclose(blocked_attention(q, k, v, plan), exact_attention(q, k, v), atol=1e-14)

    def test_ragged_last_block(self):
        rng = np.random.default_rng(5)
        q, k, v = (rng.normal(size=(11, 3)) for _ in range(3))
        ident = Permutation.identity(11)
        plan = BlockPlan(11, 4, ident, ident)
        assert plan.num_blocks == 3
        assert list(plan.spans()) == [(0, 4), (4, 8), (8, 11)]
        out = blocked_attention(q, k, v, plan, alpha=2.0)
        np.testing.assert_allclose(out[8:], exact_attention(q[8:], k[8:], v[8:]) / 2.0, atol=1e-14)

    def test_unscaled_logits(self):
        rng = np.random.default_rng(6)
        q, k, v = (rng.normal(size=(6, 4)) for _ in range(3))
        plan = BlockPlan(6, 6, Permutation.identity(6), Permutation.identity(6))
        np.testing.assert_allclose(blocked_attention(q, k, v, plan, scaled=False),
                                   exact_attention(q, k, v, scaled=False), atol=1e-14)

    def test_workers_do_not_change_output(self):
        rng = np.random.default_rng(7)
        q, k, v = (rng.normal(size=(300, 8)) for _ in range(3))
        est = estimate_eps(300, 16, 0.4)
        lsh = build_hasher(8, 6, 11)
        a = sparse_attention(q, k, v, est, lsh, workers=1)
        b = sparse_attention(q, k, v, est, lsh, workers=4)
        assert a.tobytes() == b.tobytes()

    def test_alpha_override(self, qkv):
        q, k, v = qkv
        est = make_estimate(8, 4, 0.1)
        lsh = build_hasher(2, 3, 1)
        base = sparse_attention(q, k, v, est, lsh, alpha=1.0)
        np.testing.assert_allclose(sparse_attention(q, k, v, est, lsh), base / est.alpha, atol=1e-15)

    def test_errors(self, qkv):
        q, k, v = qkv
        with pytest.raises(ShapeMismatch):
            sparse_attention(q, k, v, make_estimate(10, 4, 0.05), build_hasher(2, 3, 1))
        with pytest.raises(DomainError):
            BlockPlan(8, 0, Permutation.identity(8), Permutation.identity(8))
        with pytest.raises(ShapeMismatch):
            BlockPlan(8, 4, Permutation.identity(7), Permutation.identity(8))
        plan = BlockPlan(8, 4, Permutation.identity(8), Permutation.identity(8))
        with pytest.raises(DomainError):
            blocked_attention(q, k, v, plan, alpha=math.inf)


def lemma_instance(seed, n=128, d=16, std=0.5):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(n, d))
    wq, wk, wv = (std * rng.normal(size=(d, d)) for _ in range(3))
    return x @ wq, x @ wk, x @ rng.normal(size=(d, d))


class TestIdealOracle:
    def test_no_truncation_branch(self):
        rng = np.random.default_rng(0)
        q, k, v = (0.3 * rng.normal(size=(12, 4)) for _ in range(3))
        eps = 1e-6
        res = ideal_sparse_attention(q, k, v, eps, 4)
        assert np.all(res.kept_counts == 12)
        np.testing.assert_allclose(res.a_tilde_row_mass, res.d_exact, rtol=1e-15)
        np.testing.assert_allclose(res.t, exact_attention(q, k, v) / res.alpha, atol=1e-14)

    def test_one_dominant_logit(self):
        n = 6
        q = np.eye(n) * 20.0
        k = np.eye(n)
        v = np.arange(n * 2, dtype=float).reshape(n, 2)
        res = ideal_sparse_attention(q, k, v, 0.1, 1, scaled=False)
        assert np.all(res.kept_counts == 1)
        assert res.alpha == pytest.approx(2.0, abs=1e-14)
        np.testing.assert_allclose(res.t, v / 2.0, atol=1e-14)

    def test_nothing_kept_row_is_zero(self):
        # a uniform row has every entry 1/n <= eps
        res = ideal_sparse_attention(np.zeros((4, 2)), np.ones((4, 2)), np.ones((4, 1)), 0.3, 1)
        assert np.all(res.kept_counts == 0)
        assert np.all(res.t == 0.0)

    def test_hypothesis_alone_does_not_bound_a_uniform_row(self):
        # every entry 1/4 <= 0.3 so the row is (0.3, 1)-sparse, yet all mass is dropped:
        # the error 1 exceeds (n-k) eps |V| = 0.9
        res = ideal_sparse_attention(np.zeros((4, 2)), np.ones((4, 2)), np.ones((4, 1)), 0.3, 1)
        assert np.all(res.hypothesis_rows(1))
        err = error_report(np.ones((4, 1)), res.t, 4, 1, 0.3, np.ones((4, 1)))
        assert err.linf == 1.0 and err.bound == pytest.approx(0.9) and not err.within_bound

    def test_kept_entries_exceed_threshold(self):
        q, k, v = lemma_instance(1)
        eps = 0.005
        res = ideal_sparse_attention(q, k, v, eps, 8)
        assert np.all(res.a_tilde_row_mass <= res.d_exact)
        w = np.exp(q @ k.T / 4.0)
        w /= w.sum(axis=1, keepdims=True)
        np.testing.assert_array_equal(res.kept_counts, (w > eps).sum(axis=1))

    @pytest.mark.parametrize("seed", range(10))
    def test_conditional_lemmas(self, seed):
        n, k = 128, 8
        q, kk, v = lemma_instance(seed, n)
        eps = estimate_eps(n, k, 16.0).eps
        res = ideal_sparse_attention(q, kk, v, eps, k)
        rows = res.hypothesis_rows(k) & (res.a_tilde_row_mass > 0)
        assert rows.any()
        ratio = res.a_tilde_row_mass[rows] / res.d_exact[rows]
        assert np.all(ratio <= 1.0)
        assert np.all(ratio >= 1.0 - (n - k) * eps)
        dt = res.alpha * res.a_tilde_row_mass[rows] / res.d_exact[rows]
        assert np.all(dt >= 1.0) and np.all(dt <= res.alpha)
        # kept weights renormalized over the kept mass lie in [eps, 1]
        logits = q[rows] @ kk.T / 4.0
        a = np.exp(logits - logits.max(axis=1, keepdims=True))
        kept = a > a.sum(axis=1, keepdims=True) * eps
        renorm = np.where(kept, a, 0.0) / res.a_tilde_row_mass[rows, None]
        assert np.all(renorm[kept] >= eps) and np.all(renorm[kept] <= 1.0)
        err = np.max(np.abs(exact_attention(q, kk, v) - res.t), axis=1)[res.hypothesis_rows(k)]
        assert np.all(err <= (n - k) * eps * np.max(np.abs(v)))

    def test_domain(self):
        z = np.zeros((4, 2))
        for eps, k in [(0.0, 1), (1.0, 1), (0.4, 1), (0.1, 5)]:
            with pytest.raises(DomainError):
                ideal_sparse_attention(z, z, z, eps, k)


class TestErrorReport:
    def test_identical(self):
        m = np.arange(6.0).reshape(2, 3)
        rep = error_report(m, m.copy(), 2, 1, 0.1, m)
        assert rep.l2 == 0.0 and rep.linf == 0.0 and rep.within_bound

    def test_single_entry_offset(self):
        m = np.zeros((3, 3))
        a = m.copy()
        a[1, 2] = 0.5
        rep = error_report(m, a, 3, 1, 0.1, np.full((3, 3), 2.0))
        assert rep.linf == 0.5 and rep.l2 == 0.5
        assert rep.bound == pytest.approx(0.4)
        assert not rep.within_bound

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            error_report(np.zeros((2, 2)), np.zeros((2, 3)), 2, 1, 0.1, np.zeros((2, 2)))

    def test_oracle_within_bound_on_random_instances(self):
        n, k = 64, 8
        for seed in range(100):
            q, kk, v = lemma_instance(seed, n, d=8)
            eps = estimate_eps(n, k, 16.0).eps
            res = ideal_sparse_attention(q, kk, v, eps, k)
            rows = res.hypothesis_rows(k)
            if not rows.any():
                continue
            rep = error_report(exact_attention(q, kk, v)[rows], res.t[rows], n, k, eps, v)
            assert rep.within_bound
