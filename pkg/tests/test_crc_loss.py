import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from aoc_ids.crc_loss import (
    BatchRepresentations,
    LossConfig,
    cosine_sim,
    crc_loss,
    head_loss_and_grad,
    infonce_loss,
    loss_and_grads,
)

from oracles import finite_diff, literal_loss, max_rel_error


class TestCosine:
    def test_identical(self):
        # the +1e-12 norm guard leaves a 2e-12 shortfall from exact 1
        assert cosine_sim([1, 0], [1, 0]) == pytest.approx(1.0, abs=1e-9)

    def test_zero_vector_is_guarded(self):
        assert cosine_sim([0, 0], [1, 0]) == 0.0

    def test_orthogonal(self):
        assert cosine_sim([1, 0], [0, 1]) == 0.0

    def test_direct_formula(self):
        expected = 32 / math.sqrt(14 * 77)
        assert expected == pytest.approx(0.974631846, abs=1e-9)
        assert cosine_sim([1, 2, 3], [4, 5, 6]) == pytest.approx(expected, rel=1e-12)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            cosine_sim([1, 2], [1, 2, 3])


class TestLossValues:
    def test_no_abnormals_is_exactly_zero(self):
        batch = BatchRepresentations(np.random.default_rng(0).normal(size=(5, 3)), np.zeros((0, 3)))
        assert crc_loss(batch) == 0.0
        assert infonce_loss(batch) == 0.0

    def test_hand_evaluated_crc(self):
        batch = BatchRepresentations([[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0]])
        assert crc_loss(batch, LossConfig(1.0)) == pytest.approx(math.log(1 + 2 / math.e), rel=1e-12)

    def test_hand_evaluated_infonce(self):
        batch = BatchRepresentations([[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0]])
        assert infonce_loss(batch, LossConfig(1.0)) == pytest.approx(math.log(1 + 1 / math.e), rel=1e-12)

    def test_single_normal_warns_and_is_zero(self):
        with pytest.warns(UserWarning):
            assert crc_loss(BatchRepresentations([[1.0, 2.0]], [[0.0, 1.0]])) == 0.0

    @settings(max_examples=60, deadline=None)
    @given(
        l_n=st.integers(2, 6),
        l_a=st.integers(0, 6),
        dim=st.integers(2, 5),
        tau=st.sampled_from([1.0, 0.5, 0.1, 0.02]),
        seed=st.integers(0, 2**31),
    )
    def test_matches_literal_oracle(self, l_n, l_a, dim, tau, seed):
        rng = np.random.default_rng(seed)
        normals = rng.normal(size=(l_n, dim))
        abnormals = rng.normal(size=(l_a, dim))
        batch = BatchRepresentations(normals, abnormals.reshape(l_a, dim))
        for shared, fn in ((True, crc_loss), (False, infonce_loss)):
            expected = literal_loss(normals.tolist(), abnormals.tolist(), tau, shared)
            assert fn(batch, LossConfig(tau)) == pytest.approx(expected, rel=1e-9)

    @settings(max_examples=40, deadline=None)
    @given(l_n=st.integers(2, 6), l_a=st.integers(1, 6), seed=st.integers(0, 2**31))
    def test_crc_not_below_infonce(self, l_n, l_a, seed):
        rng = np.random.default_rng(seed)
        batch = BatchRepresentations(rng.normal(size=(l_n, 4)), rng.normal(size=(l_a, 4)))
        cfg = LossConfig(0.5)
        assert crc_loss(batch, cfg) >= infonce_loss(batch, cfg) - 1e-12


class TestInvariances:
    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**31), scale=st.floats(1e-3, 1e3), which=st.integers(0, 7))
    def test_scale_invariance(self, seed, scale, which):
        rng = np.random.default_rng(seed)
        reps = rng.normal(size=(8, 4))
        labels = np.array([0, 0, 0, 0, 0, 1, 1, 1])
        before = crc_loss(BatchRepresentations.from_labels(reps, labels))
        reps[which] *= scale
        after = crc_loss(BatchRepresentations.from_labels(reps, labels))
        assert after == pytest.approx(before, rel=1e-9)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31))
    def test_permutation_invariance(self, seed):
        rng = np.random.default_rng(seed)
        normals, abnormals = rng.normal(size=(6, 3)), rng.normal(size=(4, 3))
        base = crc_loss(BatchRepresentations(normals, abnormals))
        shuffled = crc_loss(BatchRepresentations(rng.permutation(normals), rng.permutation(abnormals)))
        assert shuffled == pytest.approx(base, rel=1e-12)

    def test_low_temperature_is_stable(self):
        # similarity logits reach +-50 at tau = 0.02
        normals = np.tile([1.0, 0.0, 0.0], (4, 1))
        abnormals = np.array([[-1.0, 0.0, 0.0], [1.0, 1e-9, 0.0]])
        for fn in (crc_loss, infonce_loss):
            value = fn(BatchRepresentations(normals, abnormals), LossConfig(0.02))
            assert np.isfinite(value)
        reps = np.vstack([normals, abnormals])
        loss, grad = head_loss_and_grad(reps, np.array([0, 0, 0, 0, 1, 1]), LossConfig(0.02))
        assert np.isfinite(loss) and np.all(np.isfinite(grad))


class TestGradients:
    @pytest.mark.parametrize("variant", ["crc", "infonce"])
    @pytest.mark.parametrize("tau", [1.0, 0.3])
    @pytest.mark.parametrize("seed", range(4))
    def test_finite_differences_on_3_vectors(self, variant, tau, seed):
        rng = np.random.default_rng(seed)
        reps = rng.normal(size=(7, 3))
        labels = np.array([0, 1, 0, 0, 1, 0, 1])
        cfg = LossConfig(tau, variant)
        _, grad = head_loss_and_grad(reps, labels, cfg)
        numeric = finite_diff(lambda r: head_loss_and_grad(r, labels, cfg)[0], reps.copy())
        assert max_rel_error(grad, numeric) < 1e-5

    def test_decoder_gradient_is_head_only_gradient(self):
        rng = np.random.default_rng(3)
        en, de = rng.normal(size=(6, 2)), rng.normal(size=(6, 4))
        labels = np.array([0, 0, 1, 0, 1, 0])
        cfg = LossConfig(0.5)
        total, d_en, d_de = loss_and_grads(en, de, labels, cfg)
        l_en, g_en = head_loss_and_grad(en, labels, cfg)
        l_de, g_de = head_loss_and_grad(de, labels, cfg)
        assert total == pytest.approx(l_en + l_de, rel=1e-15)
        assert np.array_equal(d_de, g_de) and np.array_equal(d_en, g_en)

    def test_head_selection(self):
        rng = np.random.default_rng(4)
        en, de = rng.normal(size=(5, 2)), rng.normal(size=(5, 3))
        labels = np.array([0, 0, 1, 0, 1])
        _, d_en, d_de = loss_and_grads(en, de, labels, LossConfig(), heads="encoder")
        assert d_de is None and d_en is not None
        with pytest.raises(ValueError):
            loss_and_grads(en, de, labels, LossConfig(), heads="neither")

    def test_vanishing_at_global_minimum(self):
        reps = np.tile([0.3, -1.2, 2.0], (5, 1))
        loss, grad = head_loss_and_grad(reps, np.zeros(5), LossConfig())
        assert loss == 0.0 and not grad.any()

    def test_zero_norm_vector_gets_finite_gradient(self):
        reps = np.array([[1.0, 0.0], [0.9, 0.1], [0.0, 0.0], [0.0, 1.0]])
        loss, grad = head_loss_and_grad(reps, np.array([0, 0, 1, 1]), LossConfig())
        assert np.isfinite(loss) and np.all(np.isfinite(grad))


def test_config_validation():
    with pytest.raises(ValueError):
        LossConfig(temperature=0.0)
    with pytest.raises(ValueError):
        LossConfig(variant="triplet")
