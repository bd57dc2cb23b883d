import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoc_ids.decision import (
    SIGMA_FLOOR,
    AnchorContext,
    DecisionError,
    Gaussian,
    GaussianPair,
    HeadDecision,
    classify,
    classify_fixed_threshold,
    classify_many,
    fit_two_gaussians,
    fixed_threshold,
    mean_normal,
    posteriors,
    score_all,
    vote,
    vote_many,
)


def _density(x, mu, sigma):
    return math.exp(-0.5 * ((x - mu) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))


def _pair(mu_n, s_n, w_n, mu_a, s_a, w_a):
    return GaussianPair(Gaussian(mu_n, s_n, w_n), Gaussian(mu_a, s_a, w_a))


class TestMeanNormal:
    def test_examples(self):
        assert np.array_equal(mean_normal([[1.0, 0.0], [0.0, 1.0]]), [0.5, 0.5])
        assert np.array_equal(mean_normal([[0.3, -2.0, 7.0]]), [0.3, -2.0, 7.0])

    def test_matches_exact_summation(self):
        reps = np.random.default_rng(0).normal(size=(1000, 16))
        got = mean_normal(reps)
        oracle = [math.fsum(reps[:, j]) / 1000 for j in range(16)]
        assert np.allclose(got, oracle, rtol=0, atol=1e-12)

    def test_empty(self):
        with pytest.raises(DecisionError):
            mean_normal(np.zeros((0, 3)))


def test_score_all_order_and_values():
    anchor = np.array([1.0, 2.0, 3.0])
    reps = np.array([[4.0, 5.0, 6.0], [1.0, 2.0, 3.0], [-1.0, -2.0, -3.0]])
    assert score_all(anchor, reps) == pytest.approx([0.974631846, 1.0, -1.0], abs=1e-9)


class TestFit:
    def test_recovers_synthetic_mixture(self):
        rng = np.random.default_rng(2024)
        comp = rng.random(500) < 0.5
        scores = np.where(comp, rng.normal(0.9, 0.02, 500), rng.normal(0.3, 0.05, 500))
        pair = fit_two_gaussians(scores)
        assert pair.normal.mu == pytest.approx(0.9, abs=0.02)
        assert pair.abnormal.mu == pytest.approx(0.3, abs=0.02)
        assert pair.normal.sigma == pytest.approx(0.02, abs=0.01)
        assert pair.abnormal.sigma == pytest.approx(0.05, abs=0.01)
        assert pair.normal.weight + pair.abnormal.weight == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_single_mode_stress(self, seed):
        scores = np.random.default_rng(seed).normal(0.6, 0.05, 400)
        pair = fit_two_gaussians(scores)
        assert pair.normal.mu > pair.abnormal.mu
        assert pair.normal.mu - pair.abnormal.mu <= 2 * np.std(scores)

    def test_loglik_non_decreasing(self):
        rng = np.random.default_rng(7)
        scores = np.concatenate([rng.normal(0.8, 0.1, 300), rng.normal(0.1, 0.2, 200)])
        trace = []
        fit_two_gaussians(scores, trace=trace)
        assert len(trace) > 1
        assert all(b >= a - 1e-9 * abs(a) for a, b in zip(trace, trace[1:]))

    def test_label_blind(self):
        rng = np.random.default_rng(8)
        scores = rng.uniform(-1, 1, 200)
        labels = (scores < 0).astype(int)
        table = np.column_stack([scores, labels])
        corrupted = table.copy()
        corrupted[:, 1] = rng.permutation(1 - labels)
        a = fit_two_gaussians(table[:, 0])
        b = fit_two_gaussians(corrupted[:, 0])
        assert a.to_dict() == b.to_dict()

    def test_degenerate(self):
        with pytest.raises(DecisionError):
            fit_two_gaussians([0.5] * 10)
        with pytest.raises(DecisionError):
            fit_two_gaussians([0.1, 0.2, 0.3])

    def test_collapse_is_floored_and_flagged(self):
        pair = fit_two_gaussians([0.2] * 50 + [0.9] * 50)
        assert pair.collapsed
        assert pair.normal.sigma >= SIGMA_FLOOR and pair.abnormal.sigma >= SIGMA_FLOOR
        assert pair.normal.mu == pytest.approx(0.9) and pair.abnormal.mu == pytest.approx(0.2)

    def test_scores_are_clipped(self):
        a = fit_two_gaussians([1.0000001, 0.9, 0.2, 0.1, 0.95, 0.15])
        b = fit_two_gaussians([1.0, 0.9, 0.2, 0.1, 0.95, 0.15])
        assert a.to_dict() == b.to_dict()

    def test_fixed_weights(self):
        rng = np.random.default_rng(3)
        scores = np.concatenate([rng.normal(0.9, 0.02, 400), rng.normal(0.3, 0.05, 100)])
        pair = fit_two_gaussians(scores, fixed_weights=True)
        assert pair.normal.weight == pair.abnormal.weight == 0.5

    @settings(max_examples=40, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=4, max_size=60), st.booleans())
    def test_ordering_invariant(self, scores, fixed):
        if np.ptp(scores) == 0:
            return
        pair = fit_two_gaussians(scores, fixed_weights=fixed)
        assert pair.normal.mu > pair.abnormal.mu
        assert pair.normal.sigma >= SIGMA_FLOOR and pair.abnormal.sigma >= SIGMA_FLOOR

    def test_pair_round_trip(self):
        pair = fit_two_gaussians(np.linspace(-0.5, 0.9, 40) ** 3)
        assert GaussianPair.from_dict(pair.to_dict()) == pair

    def test_pair_rejects_wrong_order(self):
        with pytest.raises(DecisionError):
            _pair(0.2, 0.1, 0.5, 0.8, 0.1, 0.5)


class TestClassify:
    def test_at_normal_mean(self):
        d = classify(0.9, _pair(0.9, 0.05, 0.5, 0.3, 0.05, 0.5))
        assert d.label == 0 and d.confidence > 0.99

    def test_tie_at_crossing_is_normal(self):
        d = classify(0.5, _pair(0.75, 0.1, 0.5, 0.25, 0.1, 0.5))
        assert d == HeadDecision(0, 0.5)

    def test_density_oracle(self):
        pair = _pair(0.9, 0.05, 0.6, 0.3, 0.1, 0.4)
        wn = 0.6 * _density(0.5, 0.9, 0.05)
        wa = 0.4 * _density(0.5, 0.3, 0.1)
        label = 1 if wa > wn else 0
        d = classify(0.5, pair)
        assert label == 1
        assert d.label == label
        assert d.confidence == pytest.approx(max(wn, wa) / (wn + wa), rel=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(
        st.floats(-1, 1),
        st.floats(0.01, 0.5),
        st.floats(0.01, 0.5),
        st.floats(0.05, 0.95),
        st.floats(0.0, 1.0),
    )
    def test_posteriors_sum_to_one_and_match_densities(self, score, s_n, s_a, w_n, mu_a):
        pair = _pair(mu_a + 0.3, s_n, w_n, mu_a, s_a, 1 - w_n)
        p_n, p_a = posteriors(score, pair)
        assert float(p_n + p_a) == pytest.approx(1.0, abs=1e-12)
        d = classify(score, pair)
        assert 0.5 <= d.confidence <= 1.0
        assert d.confidence == pytest.approx(float(p_a if d.label else p_n), abs=1e-12)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.01, 0.4), st.lists(st.floats(-1, 1), min_size=2, max_size=40))
    def test_monotone_with_equal_sigmas(self, sigma, scores):
        pair = _pair(0.8, sigma, 0.5, 0.1, sigma, 0.5)
        labels, _ = classify_many(np.sort(scores), pair)
        # sorted ascending: labels must go 1..1 then 0..0
        assert np.all(np.diff(labels.astype(int)) <= 0)

    def test_many_matches_single(self):
        pair = _pair(0.7, 0.1, 0.7, 0.0, 0.3, 0.3)
        scores = np.linspace(-1, 1, 101)
        labels, conf = classify_many(scores, pair)
        for s, lab, c in zip(scores, labels, conf):
            assert classify(s, pair) == HeadDecision(int(lab), float(c))


class TestVote:
    def test_examples(self):
        assert vote(HeadDecision(0, 0.9), HeadDecision(0, 0.6)) == 0
        assert vote(HeadDecision(0, 0.7), HeadDecision(1, 0.95)) == 1
        assert vote(HeadDecision(1, 0.8), HeadDecision(0, 0.8)) == 1

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 1), st.floats(0.5, 1.0))
    def test_self_vote(self, label, conf):
        d = HeadDecision(label, conf)
        assert vote(d, d) == label

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(st.integers(0, 1), st.sampled_from([0.5, 0.6, 0.8, 0.99]), st.integers(0, 1), st.sampled_from([0.5, 0.6, 0.8, 0.99])), min_size=1, max_size=30))
    def test_vectorized_agrees(self, rows):
        el, ec, dl, dc = (np.array(c) for c in zip(*rows))
        got = vote_many(el, ec, dl, dc)
        expected = [vote(HeadDecision(a, b), HeadDecision(c, d)) for a, b, c, d in rows]
        assert got.tolist() == expected


class TestFixedThreshold:
    def test_percentile_oracle(self):
        scores = np.random.default_rng(4).uniform(-1, 1, 100)
        assert fixed_threshold(scores, 5) == np.sort(scores)[4]

    @settings(max_examples=60, deadline=None)
    @given(st.lists(st.floats(-1, 1), min_size=1, max_size=300), st.floats(0.5, 99.5))
    def test_sort_based_oracle(self, scores, p):
        idx = max(math.ceil(p / 100 * len(scores)) - 1, 0)
        assert fixed_threshold(scores, p) == sorted(scores)[idx]

    def test_boundary(self):
        assert classify_fixed_threshold(0.6, 0.5) == 0
        assert classify_fixed_threshold(0.5, 0.5) == 0
        assert classify_fixed_threshold(0.4, 0.5) == 1
        assert classify_fixed_threshold(np.array([0.4, 0.5]), 0.5).tolist() == [1, 0]

    def test_empty(self):
        with pytest.raises(DecisionError):
            fixed_threshold([])


def test_anchor_context_round_trip():
    ctx = AnchorContext(np.array([0.1, 1 / 3]), np.array([2.0, -0.7, 1e-17]))
    back = AnchorContext.from_dict(ctx.to_dict())
    assert np.array_equal(back.mean_normal_en, ctx.mean_normal_en)
    assert np.array_equal(back.for_head("decoder"), ctx.mean_normal_de)
