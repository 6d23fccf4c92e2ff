import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conversum.contrastive import (
    ContrastivePairBatch,
    LossConfig,
    PairSpec,
    build_pairs,
    hinge_arguments,
    loss_subgradient,
    ranking_loss,
)
from conversum.errors import IndexOutOfRange


def brute_loss(scores, pairs):
    total = 0.0
    for p in pairs:
        total += max(0.0, p.margin - scores[p.positive_index] + scores[p.negative_index])
    return total


def central_difference(scores, pairs, eps=1e-5):
    grad = np.zeros(len(scores))
    for k in range(len(scores)):
        up, down = scores.copy(), scores.copy()
        up[k] += eps
        down[k] -= eps
        grad[k] = (brute_loss(up, pairs) - brute_loss(down, pairs)) / (2 * eps)
    return grad


scores_st = st.lists(st.floats(0, 1, allow_nan=False), min_size=0, max_size=8)
margin_st = st.floats(0, 0.2, allow_nan=False)


class TestBuildPairs:
    def test_three_candidates(self):
        pairs = build_pairs(3, LossConfig(0.01, True))
        got = [(p.positive_index, p.negative_index, p.margin) for p in pairs]
        assert [g[:2] for g in got] == [(0, 1), (0, 2), (1, 2)]
        np.testing.assert_allclose([g[2] for g in got], [0.01, 0.02, 0.01])

    def test_single_candidate_has_no_pairs(self):
        assert build_pairs(1) == []
        assert build_pairs(0) == []

    @pytest.mark.parametrize("n", range(10))
    def test_count(self, n):
        assert len(build_pairs(n)) == n * (n - 1) // 2

    def test_eight_gives_28(self):
        assert len(build_pairs(8)) == 28

    def test_fixed_margin(self):
        assert {p.margin for p in build_pairs(5, LossConfig(0.03, rank_scaled=False))} == {0.03}

    def test_invalid(self):
        with pytest.raises(ValueError):
            LossConfig(base_margin=-0.1)
        with pytest.raises(ValueError):
            PairSpec(1, 1, 0.1)
        with pytest.raises(ValueError):
            PairSpec(0, 1, -0.1)


class TestRankingLoss:
    def test_satisfied_margin(self):
        assert ranking_loss(ContrastivePairBatch([0.9, 0.5], [PairSpec(0, 1, 0.01)])) == 0.0

    def test_violated(self):
        np.testing.assert_allclose(ranking_loss(ContrastivePairBatch([0.5, 0.9], [PairSpec(0, 1, 0.01)])), 0.41)

    def test_equal_scores_cost_the_margin(self):
        np.testing.assert_allclose(ranking_loss(ContrastivePairBatch([0.3, 0.3], [PairSpec(0, 1, 0.01)])), 0.01)

    def test_out_of_range(self):
        with pytest.raises(IndexOutOfRange):
            ContrastivePairBatch([0.1, 0.2], [PairSpec(0, 2, 0.01)])

    def test_empty_batch(self):
        assert ranking_loss(ContrastivePairBatch([0.4])) == 0.0

    @settings(max_examples=200, deadline=None)
    @given(scores_st, margin_st, st.booleans())
    def test_matches_brute_force(self, scores, base, scaled):
        batch = ContrastivePairBatch.ranked(scores, LossConfig(base, scaled))
        assert abs(ranking_loss(batch) - brute_loss(batch.scores, batch.pairs)) < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(scores_st, margin_st)
    def test_nonnegative_and_zero_iff_satisfied(self, scores, base):
        batch = ContrastivePairBatch.ranked(scores, LossConfig(base))
        loss = ranking_loss(batch)
        assert loss >= 0
        satisfied = all(p.margin - batch.scores[p.positive_index] + batch.scores[p.negative_index] <= 0
                        for p in batch.pairs)
        assert (loss == 0) == satisfied

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 8), st.integers(0, 2**32 - 1), st.floats(0, 1))
    def test_convex(self, n, seed, t):
        gen = np.random.default_rng(seed)
        pairs = build_pairs(n, LossConfig(float(gen.uniform(0, 0.1))))
        a, b = gen.uniform(0, 1, n), gen.uniform(0, 1, n)
        mix = ranking_loss(ContrastivePairBatch(t * a + (1 - t) * b, pairs))
        bound = t * ranking_loss(ContrastivePairBatch(a, pairs)) + (1 - t) * ranking_loss(ContrastivePairBatch(b, pairs))
        assert mix <= bound + 1e-12

    @settings(max_examples=200, deadline=None)
    @given(scores_st, st.floats(-5, 5))
    def test_shift_invariant(self, scores, shift):
        batch = ContrastivePairBatch.ranked(scores)
        shifted = ContrastivePairBatch(batch.scores + shift, batch.pairs)
        assert abs(ranking_loss(shifted) - ranking_loss(batch)) < 1e-9

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 8), st.floats(0, 0.1), st.lists(st.floats(0, 0.05), min_size=8, max_size=8))
    def test_consecutive_gaps_give_zero_loss(self, n, base, extra):
        gaps = base + np.asarray(extra[: n - 1])
        scores = 1.0 - np.concatenate([[0.0], np.cumsum(gaps)])
        # rounding can eat a hair of the gap; widen by a ulp-scale amount
        scores = scores - np.arange(n) * 1e-12
        assert ranking_loss(ContrastivePairBatch.ranked(scores, LossConfig(base))) == 0.0


class TestSubgradient:
    def test_single_active_pair(self):
        grad = loss_subgradient(ContrastivePairBatch([0.5, 0.9], [PairSpec(0, 1, 0.01)]))
        np.testing.assert_array_equal(grad, [-1.0, 1.0])

    def test_no_active_pairs(self):
        grad = loss_subgradient(ContrastivePairBatch.ranked([0.9, 0.5, 0.1]))
        np.testing.assert_array_equal(grad, np.zeros(3))

    def test_kink_contributes_nothing(self):
        grad = loss_subgradient(ContrastivePairBatch([0.5, 0.25], [PairSpec(0, 1, 0.25)]))
        np.testing.assert_array_equal(grad, [0.0, 0.0])

    @settings(max_examples=200, deadline=None)
    @given(scores_st, margin_st)
    def test_matches_pairwise_oracle(self, scores, base):
        batch = ContrastivePairBatch.ranked(scores, LossConfig(base))
        expected = np.zeros(len(scores))
        for p in batch.pairs:
            if p.margin - batch.scores[p.positive_index] + batch.scores[p.negative_index] > 0:
                expected[p.positive_index] -= 1
                expected[p.negative_index] += 1
        np.testing.assert_array_equal(loss_subgradient(batch), expected)

    def test_finite_differences_away_from_kinks(self, rng):
        checked = 0
        while checked < 50:
            scores = rng.uniform(0, 1, 8)
            batch = ContrastivePairBatch.ranked(scores, LossConfig(float(rng.uniform(0, 0.05))))
            if np.min(np.abs(hinge_arguments(batch))) <= 1e-3:
                continue
            np.testing.assert_allclose(loss_subgradient(batch), central_difference(scores, batch.pairs), atol=1e-4)
            checked += 1

    def test_sums_to_zero(self, rng):
        for _ in range(20):
            batch = ContrastivePairBatch.ranked(rng.uniform(0, 1, 6))
            assert loss_subgradient(batch).sum() == 0


def test_all_pairs_matches_itertools():
    for n in range(7):
        pairs = [(p.positive_index, p.negative_index) for p in build_pairs(n)]
        assert pairs == list(itertools.combinations(range(n), 2))
