"""Model assembly: init, forward contract, loss expansion, exact gradients."""

import numpy as np
import pytest

from mergecap import nn
from mergecap.errors import EmptyBatch, ShapeError
from mergecap.model import (
    ModelConfig,
    ModelParams,
    expand_batch,
    expected_shapes,
    glorot_bound,
    init_params,
    loss_and_grads,
    forward,
)
from mergecap.text import EncodedCaption
from mergecap.trainer import TrainConfig, sgd_step, OptimizerState

TOY = ModelConfig(
    vocab_size=7, max_len=5, embedding_dim=4, conv_filters=5,
    kernel_size=3, feature_dim=3, hidden_dim=4, seed=11,
)


def toy_batch(config, rng, n=2, dtype=np.float32):
    batch = []
    for _ in range(n):
        body = rng.integers(4, config.vocab_size, size=int(rng.integers(1, config.max_len - 1)))
        ids = [1, *[int(b) for b in body], 2]
        true_length = len(ids)
        ids += [0] * (config.max_len - len(ids))
        feat = rng.normal(size=config.feature_dim).astype(dtype)
        batch.append((feat, EncodedCaption(tuple(ids), true_length)))
    return batch


class TestInitParams:
    def test_same_seed_bit_identical(self):
        a, b = init_params(TOY), init_params(TOY)
        for k, v in a.as_dict().items():
            assert np.array_equal(v, b.as_dict()[k])

    def test_different_seed_differs(self):
        other = ModelConfig(**{**TOY.to_dict(), "seed": 99})
        a, b = init_params(TOY), init_params(other)
        assert not np.array_equal(a.emb, b.emb)

    def test_weights_within_glorot_bounds(self):
        params = init_params(TOY)
        bounds = {
            "emb": glorot_bound(7, 4),
            "conv_w": glorot_bound(3 * 4, 5),
            "merge_w": glorot_bound(TOY.merge_width, 4),
            "out_w": glorot_bound(4, 7),
        }
        for name, bound in bounds.items():
            assert np.max(np.abs(getattr(params, name))) <= bound

    def test_biases_zero(self):
        params = init_params(TOY)
        for name in ("conv_b", "merge_b", "out_b"):
            assert np.all(getattr(params, name) == 0.0)

    def test_shapes_follow_config(self):
        params = init_params(TOY)
        for name, shape in expected_shapes(TOY).items():
            assert params.as_dict()[name].shape == shape

    def test_projection_changes_merge_width(self):
        projected = ModelConfig(**{**TOY.to_dict(), "image_projection": True})
        assert projected.merge_width == TOY.conv_filters + TOY.hidden_dim
        assert TOY.merge_width == TOY.conv_filters + TOY.feature_dim
        params = init_params(projected)
        assert params.proj_w.shape == (4, 3)
        assert params.merge_w.shape == (4, projected.merge_width)


class TestForward:
    def test_distribution_sums_to_one(self):
        rng = np.random.default_rng(0)
        params = init_params(TOY)
        for _ in range(10):
            feat = rng.normal(size=3)
            prefix = [1, 4, 0, 0, 0]
            probs = forward(params, feat, prefix)
            assert probs.shape == (7,)
            assert abs(probs.sum() - 1.0) < 1e-6

    def test_zero_conv_and_zero_image_ignores_prefix(self):
        params = init_params(TOY)
        params.conv_w[:] = 0.0
        a = forward(params, np.zeros(3), [1, 4, 5, 0, 0])
        b = forward(params, np.zeros(3), [1, 6, 6, 6, 0])
        assert np.array_equal(a, b)

    def test_pure_and_deterministic(self):
        params = init_params(TOY)
        feat = np.ones(3)
        prefix = [1, 5, 0, 0, 0]
        assert np.array_equal(forward(params, feat, prefix), forward(params, feat, prefix))

    def test_feature_shape_checked(self):
        params = init_params(TOY)
        with pytest.raises(ShapeError):
            forward(params, np.zeros(4), [1, 4, 0, 0, 0])


class TestExpansion:
    def test_short_caption_yields_two_examples(self):
        # [start, w, end] -> ([start] -> w), ([start, w] -> end)
        cap = EncodedCaption((1, 4, 2, 0, 0), 3)
        feats, prefixes, targets = expand_batch([(np.zeros(3), cap)], np.float32)
        assert prefixes.shape == (2, 5)
        assert list(prefixes[0]) == [1, 0, 0, 0, 0]
        assert list(prefixes[1]) == [1, 4, 0, 0, 0]
        assert list(targets) == [4, 2]

    def test_empty_batch_rejected(self):
        with pytest.raises(EmptyBatch):
            loss_and_grads(init_params(TOY), [])

    def test_duplicated_batch_keeps_mean_loss(self):
        rng = np.random.default_rng(1)
        params = init_params(TOY)
        batch = toy_batch(TOY, rng, n=3)
        loss_once, _ = loss_and_grads(params, batch)
        loss_twice, _ = loss_and_grads(params, batch + batch)
        assert loss_twice == pytest.approx(loss_once, abs=1e-7)


class TestGradients:
    def test_full_model_matches_finite_differences(self):
        rng = np.random.default_rng(2)
        params = init_params(TOY, dtype=np.float64)
        batch = toy_batch(TOY, rng, n=1, dtype=np.float64)

        def fn(tensors):
            return loss_and_grads(ModelParams.from_dict(tensors), batch)

        errors = nn.grad_check(fn, params.as_dict(), eps=1e-5)
        assert max(errors.values()) < 1e-5

    def test_projection_model_matches_finite_differences(self):
        config = ModelConfig(**{**TOY.to_dict(), "image_projection": True})
        rng = np.random.default_rng(3)
        params = init_params(config, dtype=np.float64)
        batch = toy_batch(config, rng, n=1, dtype=np.float64)

        def fn(tensors):
            return loss_and_grads(ModelParams.from_dict(tensors), batch)

        errors = nn.grad_check(fn, params.as_dict(), eps=1e-5)
        assert max(errors.values()) < 1e-5


class TestDescent:
    def test_loss_decreases_under_small_sgd_steps(self):
        rng = np.random.default_rng(4)
        params = init_params(TOY)
        batch = toy_batch(TOY, rng, n=4)
        config = TrainConfig(optimizer="sgd", lr=1e-2)
        state = OptimizerState()
        first, _ = loss_and_grads(params, batch)
        loss = first
        for _ in range(50):
            loss, grads = loss_and_grads(params, batch)
            params, state = sgd_step(params, grads, state, config)
        assert loss < first
