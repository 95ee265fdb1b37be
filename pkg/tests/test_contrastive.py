import math
from collections import Counter
from itertools import combinations

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from clh3g.contrastive import ProjectionHead, choose_cl_pairs, make_cl_pairs, nt_xent_loss, partner_index, project
from clh3g.corpus import Sample
from clh3g.errors import ContractError, NumericError
from clh3g.numcore import Tensor, gradcheck


def _nt_xent_oracle(z, pair, tau):
    """Direct loop over anchors, independent of the vectorised implementation."""
    unit = z / np.linalg.norm(z, axis=1, keepdims=True)
    total = 0.0
    for i in range(len(z)):
        others = [k for k in range(len(z)) if k != i]
        denom = sum(math.exp(unit[i] @ unit[k] / tau) for k in others)
        total -= math.log(math.exp(unit[i] @ unit[pair[i]] / tau) / denom)
    return total / len(z)


class TestNTXent:
    def test_single_pair_is_zero(self):
        z = Tensor(np.random.default_rng(0).normal(size=(2, 5)))
        assert nt_xent_loss(z, partner_index(1), 0.1).item() == 0.0

    def test_identical_rows_log3(self):
        z = Tensor(np.ones((4, 3)))
        assert abs(nt_xent_loss(z, partner_index(2), 0.1).item() - math.log(3)) <= 1e-9

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=(8, 4))
        pair = partner_index(4)
        assert abs(nt_xent_loss(Tensor(z), pair, 0.5).item() - _nt_xent_oracle(z, pair, 0.5)) <= 1e-12

    def test_rescaling_invariant(self):
        rng = np.random.default_rng(1)
        z = rng.normal(size=(6, 4))
        scale = rng.uniform(0.1, 10, size=(6, 1))
        a = nt_xent_loss(Tensor(z), partner_index(3), 0.1).item()
        b = nt_xent_loss(Tensor(z * scale), partner_index(3), 0.1).item()
        assert abs(a - b) <= 1e-9

    def test_common_permutation_invariant(self):
        rng = np.random.default_rng(2)
        z, pair = rng.normal(size=(6, 4)), partner_index(3)
        perm = rng.permutation(6)
        inv = np.argsort(perm)
        permuted_pair = inv[pair[perm]]
        a = nt_xent_loss(Tensor(z), pair, 0.2).item()
        b = nt_xent_loss(Tensor(z[perm]), permuted_pair, 0.2).item()
        assert abs(a - b) <= 1e-12

    def test_gradient_n4(self):
        z = Tensor(np.random.default_rng(3).normal(size=(8, 5)), requires_grad=True)
        assert max(gradcheck(lambda: nt_xent_loss(z, partner_index(4), 0.1), [z])) <= 1e-4

    def test_zero_row_rejected(self):
        z = np.ones((4, 3))
        z[2] = 0
        with pytest.raises(NumericError):
            nt_xent_loss(Tensor(z), partner_index(2), 0.1)

    def test_pairing_must_be_involution(self):
        with pytest.raises(ContractError):
            nt_xent_loss(Tensor(np.ones((4, 2))), [1, 2, 3, 0], 0.1)
        with pytest.raises(ContractError):
            nt_xent_loss(Tensor(np.ones((4, 2))), [0, 1, 3, 2], 0.1)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 6), st.floats(0.05, 2.0), st.integers(0, 10_000))
    def test_nonnegative(self, n, tau, seed):
        z = np.random.default_rng(seed).normal(size=(2 * n, 3))
        assert nt_xent_loss(Tensor(z), partner_index(n), tau).item() >= -1e-12


def _pool_sample(n_hist):
    return Sample(["x"], [[f"h{i}"] for i in range(n_hist)], ["target"], "a", 0)


class TestPairs:
    def test_forced_pair(self):
        pairs = make_cl_pairs([_pool_sample(1)], np.random.default_rng(0))
        assert sorted(map(tuple, pairs[0])) == [("h0",), ("target",)]

    def test_eleven_pool_distinct(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            (a, b), = make_cl_pairs([_pool_sample(10)], rng)
            assert a != b

    def test_singleton_pool_skipped(self):
        assert choose_cl_pairs([_pool_sample(0), _pool_sample(2)], np.random.default_rng(0))[0].sample == 1

    def test_unordered_pairs_uniform(self):
        rng = np.random.default_rng(2)
        sample = [_pool_sample(10)]
        counts = Counter(frozenset((p.first, p.second)) for _ in range(100_000)
                         for p in choose_cl_pairs(sample, rng))
        expected = [frozenset(c) for c in combinations(range(11), 2)]
        assert set(counts) == set(expected)
        assert stats.chisquare([counts[k] for k in expected]).pvalue > 0.01

    def test_partner_index_involution(self):
        p = partner_index(5)
        np.testing.assert_array_equal(p[p], np.arange(10))
        assert np.all(p != np.arange(10))


class TestProjection:
    def test_shape(self):
        head = ProjectionHead(6, np.random.default_rng(0))
        assert project(head, Tensor(np.ones((3, 6)))).shape == (3, 6)

    def test_zero_weights_give_final_bias(self):
        head = ProjectionHead(4, np.random.default_rng(0))
        for p in head.parameters():
            p.data[:] = 0
        head.output.bias.data[:] = [1.0, -2.0, 0.5, 3.0]
        out = project(head, Tensor(np.random.default_rng(1).normal(size=(5, 4)))).data
        np.testing.assert_array_equal(out, np.tile([1.0, -2.0, 0.5, 3.0], (5, 1)))

    def test_gradient(self):
        head = ProjectionHead(4, np.random.default_rng(2))
        x = Tensor(np.random.default_rng(3).normal(size=(3, 4)), requires_grad=True)
        w = Tensor(np.random.default_rng(4).normal(size=(3, 4)))
        assert max(gradcheck(lambda: (project(head, x) * w).sum(), [x] + head.parameters())) <= 1e-4
