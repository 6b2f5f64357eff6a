"""Layer ops: frozen forward values, analytic-vs-numeric gradients, properties."""

import numpy as np
import pytest

from mergecap import nn
from mergecap.errors import EmptyInput, NumericError, SequenceTooShort, ShapeError


class TestEmbedding:
    def test_identity_lookup(self):
        emb = np.eye(2)
        assert np.array_equal(nn.embedding_forward(np.array([0]), emb), [[1.0, 0.0]])

    def test_repeated_ids(self):
        emb = np.arange(8.0).reshape(4, 2)
        out = nn.embedding_forward(np.array([1, 1]), emb)
        assert np.array_equal(out[0], out[1])
        assert np.array_equal(out[0], emb[1])

    def test_out_of_range(self):
        with pytest.raises(IndexError):
            nn.embedding_forward(np.array([5]), np.zeros((4, 2)))

    def test_backward_scatter_adds(self):
        grad = np.ones((3, 2))
        d = nn.embedding_backward(np.array([1, 1, 0]), grad, vocab_size=4)
        assert np.array_equal(d[1], [2.0, 2.0])
        assert np.array_equal(d[0], [1.0, 1.0])
        assert np.array_equal(d[2], [0.0, 0.0])

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(9)
        ids = np.array([0, 2, 2, 3])
        coeff = rng.normal(size=(4, 3))

        def fn(p):
            out = nn.embedding_forward(ids, p["emb"])
            return float((coeff * out).sum()), {"emb": nn.embedding_backward(ids, coeff, 5)}

        errors = nn.grad_check(fn, {"emb": rng.normal(size=(5, 3))}, eps=1e-6)
        assert errors["emb"] < 1e-8


class TestConv1d:
    def test_hand_convolution(self):
        # D=1, K=3, unit filter, X=[1,2,3,4] -> windows sum to [6, 9]
        x = np.array([[1.0], [2.0], [3.0], [4.0]])
        w = np.ones((1, 3, 1))
        b = np.zeros(1)
        out, _ = nn.conv1d_forward(x, w, b)
        assert np.allclose(out, [[6.0], [9.0]])

    def test_zero_filters_give_zero(self):
        rng = np.random.default_rng(0)
        x = rng.normal(size=(6, 3))
        out, _ = nn.conv1d_forward(x, np.zeros((4, 3, 3)), np.zeros(4))
        assert np.all(out == 0.0)

    def test_too_short(self):
        with pytest.raises(SequenceTooShort):
            nn.conv1d_forward(np.zeros((2, 1)), np.ones((1, 3, 1)), np.zeros(1))

    def test_depth_mismatch(self):
        with pytest.raises(ShapeError):
            nn.conv1d_forward(np.zeros((4, 2)), np.ones((1, 3, 1)), np.zeros(1))

    def test_linear_in_input_without_relu(self):
        rng = np.random.default_rng(1)
        w = rng.normal(size=(5, 3, 2))
        b = rng.normal(size=5)
        x1, x2 = rng.normal(size=(7, 2)), rng.normal(size=(7, 2))
        a, c = 0.7, -1.3
        lhs, _ = nn.conv1d_forward(a * x1 + c * x2, w, np.zeros(5), apply_relu=False)
        r1, _ = nn.conv1d_forward(x1, w, np.zeros(5), apply_relu=False)
        r2, _ = nn.conv1d_forward(x2, w, np.zeros(5), apply_relu=False)
        assert np.allclose(lhs, a * r1 + c * r2, atol=1e-12)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(2)
        w = rng.normal(size=(4, 3, 2))
        b = rng.normal(size=4)
        xs = rng.normal(size=(5, 8, 2))
        batched, _ = nn.conv1d_forward(xs, w, b)
        for i in range(5):
            single, _ = nn.conv1d_forward(xs[i], w, b)
            assert np.allclose(batched[i], single)

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(3)
        x0 = rng.normal(size=(6, 2))
        w0 = rng.normal(size=(3, 3, 2))
        b0 = rng.normal(size=3)
        target = rng.normal(size=(4, 3))

        def fn(params):
            out, cache = nn.conv1d_forward(params["x"], params["w"], params["b"])
            loss = float(((out - target) ** 2).sum())
            dx, dw, db = nn.conv1d_backward(cache, 2.0 * (out - target))
            return loss, {"x": dx, "w": dw, "b": db}

        errors = nn.grad_check(fn, {"x": x0, "w": w0, "b": b0}, eps=1e-6)
        assert max(errors.values()) < 1e-6


class TestGlobalMaxPool:
    def test_continues_conv_example(self):
        pooled, argmax = nn.global_max_pool(np.array([[6.0], [9.0]]))
        assert np.array_equal(pooled, [9.0])
        assert np.array_equal(argmax, [1])

    def test_single_row(self):
        row = np.array([[3.0, -1.0, 2.0]])
        pooled, argmax = nn.global_max_pool(row)
        assert np.array_equal(pooled, row[0])
        assert np.array_equal(argmax, [0, 0, 0])

    def test_tie_takes_smallest_index(self):
        pooled, argmax = nn.global_max_pool(np.array([[3.0], [3.0]]))
        assert pooled[0] == 3.0
        assert argmax[0] == 0

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            nn.global_max_pool(np.zeros((0, 2)))

    def test_backward_routes_to_argmax(self):
        h = np.array([[6.0], [9.0]])
        _, argmax = nn.global_max_pool(h)
        dh = nn.global_max_pool_backward(argmax, h.shape, np.array([2.5]))
        assert np.array_equal(dh, [[0.0], [2.5]])

    def test_backward_conserves_gradient_mass(self):
        rng = np.random.default_rng(4)
        h = rng.normal(size=(7, 5))
        _, argmax = nn.global_max_pool(h)
        grad = rng.normal(size=5)
        dh = nn.global_max_pool_backward(argmax, h.shape, grad)
        assert np.allclose(dh.sum(axis=0), grad)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        coeff = rng.normal(size=4)

        def fn(p):
            pooled, argmax = nn.global_max_pool(p["h"])
            dh = nn.global_max_pool_backward(argmax, p["h"].shape, coeff)
            return float(coeff @ pooled), {"h": dh}

        # continuous random values: no ties, so the probe stays smooth
        errors = nn.grad_check(fn, {"h": rng.normal(size=(6, 4))}, eps=1e-6)
        assert errors["h"] < 1e-8


class TestDense:
    def test_relu_clamps(self):
        out, _ = nn.dense_forward(np.array([-1.0, 2.0]), np.eye(2), np.zeros(2), "relu")
        assert np.array_equal(out, [0.0, 2.0])

    def test_bias_only(self):
        out, _ = nn.dense_forward(np.zeros(2), np.zeros((1, 2)), np.array([5.0]), "none")
        assert np.array_equal(out, [5.0])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nn.dense_forward(np.zeros(3), np.zeros((2, 2)), np.zeros(2))

    def test_identity_backward_passes_gradient(self):
        _, cache = nn.dense_forward(np.array([1.0, -2.0]), np.eye(2), np.zeros(2), "none")
        dx, _, _ = nn.dense_backward(cache, np.array([0.3, -0.7]))
        assert np.allclose(dx, [0.3, -0.7])

    def test_relu_zero_preactivation_gets_zero_gradient(self):
        # subgradient convention at exactly 0
        _, cache = nn.dense_forward(np.zeros(1), np.zeros((1, 1)), np.zeros(1), "relu")
        dx, dw, db = nn.dense_backward(cache, np.array([1.0]))
        assert dx[0] == 0.0 and db[0] == 0.0

    def test_gradients_match_finite_differences(self):
        rng = np.random.default_rng(5)
        params = {
            "x": rng.normal(size=4),
            "w": rng.normal(size=(3, 4)),
            "b": rng.normal(size=3),
        }
        target = rng.normal(size=3)

        def fn(p):
            out, cache = nn.dense_forward(p["x"], p["w"], p["b"], "relu")
            loss = float(((out - target) ** 2).sum())
            dx, dw, db = nn.dense_backward(cache, 2.0 * (out - target))
            return loss, {"x": dx, "w": dw, "b": db}

        errors = nn.grad_check(fn, params, eps=1e-6)
        assert max(errors.values()) < 1e-6


class TestSoftmax:
    def test_symmetry(self):
        assert np.allclose(nn.softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_overflow_guard(self):
        assert np.allclose(nn.softmax(np.array([1000.0, 1000.0])), [0.5, 0.5])

    def test_closed_form(self):
        assert np.allclose(nn.softmax(np.array([0.0, np.log(3.0)])), [0.25, 0.75])

    def test_non_finite_rejected(self):
        with pytest.raises(NumericError):
            nn.softmax(np.array([np.nan, 0.0]))

    def test_simplex_property(self):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p = nn.softmax(rng.normal(scale=10, size=rng.integers(2, 30)))
            assert np.all(p >= 0)
            assert abs(p.sum() - 1.0) < 1e-6

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(7)
        z0 = rng.normal(size=5)
        coeff = rng.normal(size=5)  # loss = <coeff, softmax(z)>

        def fn(p):
            probs = nn.softmax(p["z"])
            return float(coeff @ probs), {"z": nn.softmax_backward(probs, coeff)}

        errors = nn.grad_check(fn, {"z": z0}, eps=1e-6)
        assert errors["z"] < 1e-7


class TestCrossEntropy:
    def test_half(self):
        assert nn.cross_entropy(np.array([0.5, 0.5]), 0) == pytest.approx(0.6931471805599453)

    def test_certain(self):
        assert nn.cross_entropy(np.array([1.0, 0.0]), 0) == 0.0

    def test_floor(self):
        assert nn.cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(-np.log(1e-12))

    def test_bad_target(self):
        with pytest.raises(IndexError):
            nn.cross_entropy(np.array([1.0, 0.0]), 2)

    def test_backward(self):
        dp = nn.cross_entropy_backward(np.array([0.25, 0.75]), 1)
        assert np.allclose(dp, [0.0, -1.0 / 0.75])

    def test_chained_softmax_ce_equals_fused_form(self):
        rng = np.random.default_rng(8)
        z = rng.normal(size=6)
        probs = nn.softmax(z)
        dz = nn.softmax_backward(probs, nn.cross_entropy_backward(probs, 2))
        fused = probs.copy()
        fused[2] -= 1.0
        assert np.allclose(dz, fused, atol=1e-12)


class TestGradCheck:
    def test_quadratic(self):
        def fn(p):
            theta = p["theta"]
            return float(theta[0] ** 2), {"theta": 2.0 * theta}

        errors = nn.grad_check(fn, {"theta": np.array([3.0])}, eps=1e-5)
        assert errors["theta"] < 1e-9

    def test_constant_function(self):
        def fn(p):
            return 1.0, {"theta": np.zeros_like(p["theta"])}

        errors = nn.grad_check(fn, {"theta": np.array([0.3, -0.2])}, eps=1e-5)
        assert errors["theta"] == 0.0

    def test_detects_wrong_gradient(self):
        def fn(p):
            theta = p["theta"]
            return float(theta[0] ** 2), {"theta": -2.0 * theta}  # wrong sign

        errors = nn.grad_check(fn, {"theta": np.array([3.0])}, eps=1e-5)
        assert errors["theta"] > 0.5
