"""Network primitives: batch norm, losses, Adam."""

import numpy as np
import pytest

from mbotfs.errors import ConfigurationError, DegenerateInputError, TrainingDivergedError
from mbotfs.layers import (
    adam_init,
    adam_step,
    batch_norm_backward,
    batch_norm_forward,
    glorot_uniform,
    linear_backward,
    linear_forward,
    loss_cross_entropy,
    loss_papr,
    loss_papr_grad,
    loss_reconstruction,
    loss_reconstruction_grad,
    relu_backward,
    relu_forward,
    softmax_cross_entropy,
    softmax_rows,
    total_loss,
)


class TestBatchNorm:
    def test_standardizes_large_batch(self):
        rng = np.random.default_rng(0)
        x = rng.normal(3.0, 2.0, size=(4096, 6))
        out, _, _, _ = batch_norm_forward(
            x, np.ones(6), np.zeros(6), 1e-5, "train", np.zeros(6), np.ones(6)
        )
        assert np.max(np.abs(np.mean(out, axis=0))) < 0.05
        assert np.all((np.var(out, axis=0) > 0.9) & (np.var(out, axis=0) < 1.1))

    def test_constant_column_collapses_to_shift(self):
        x = np.full((16, 3), 7.0)
        beta = np.array([0.5, -1.0, 2.0])
        out, _, _, _ = batch_norm_forward(
            x, np.ones(3), beta, 1e-5, "train", np.zeros(3), np.ones(3)
        )
        np.testing.assert_allclose(out, np.broadcast_to(beta, (16, 3)), atol=1e-9)

    def test_eval_mode_single_sample(self):
        x = np.array([[1.0, 2.0]])
        out1, _, _, _ = batch_norm_forward(
            x, np.ones(2), np.zeros(2), 1e-5, "eval", np.array([0.5, 0.5]), np.array([4.0, 4.0])
        )
        out2, _, _, _ = batch_norm_forward(
            x, np.ones(2), np.zeros(2), 1e-5, "eval", np.array([0.5, 0.5]), np.array([4.0, 4.0])
        )
        np.testing.assert_array_equal(out1, out2)
        np.testing.assert_allclose(out1, (x - 0.5) / np.sqrt(4.0 + 1e-5), atol=1e-12)

    def test_batch_of_one_rejected_in_train(self):
        with pytest.raises(ConfigurationError):
            batch_norm_forward(
                np.ones((1, 3)), np.ones(3), np.zeros(3), 1e-5, "train", np.zeros(3), np.ones(3)
            )

    def test_backward_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((12, 5))
        gamma = rng.standard_normal(5) + 1.5
        beta = rng.standard_normal(5)
        target = rng.standard_normal((12, 5))

        def loss(xv, gv, bv):
            out, _, _, _ = batch_norm_forward(
                xv, gv, bv, 1e-5, "train", np.zeros(5), np.ones(5)
            )
            return np.sum((out - target) ** 2)

        out, cache, _, _ = batch_norm_forward(
            x, gamma, beta, 1e-5, "train", np.zeros(5), np.ones(5)
        )
        gx, gg, gb = batch_norm_backward(2 * (out - target), cache)
        h = 1e-6
        for arr, grad, which in ((x, gx, 0), (gamma, gg, 1), (beta, gb, 2)):
            flat = arr.reshape(-1)
            gflat = np.asarray(grad).reshape(-1)
            for idx in rng.choice(flat.size, 5, replace=False):
                orig = flat[idx]
                flat[idx] = orig + h
                lp = loss(x, gamma, beta)
                flat[idx] = orig - h
                lm = loss(x, gamma, beta)
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                assert fd == pytest.approx(gflat[idx], rel=1e-4, abs=1e-7)


class TestLosses:
    def test_reconstruction_zero_iff_equal(self):
        x = np.array([1 + 1j, 2.0, -3j])
        assert loss_reconstruction(x, x) == 0.0
        pert = np.array([1.0, 0.0, 0.0]) / 1.0
        assert loss_reconstruction(x, x + pert) == pytest.approx(1.0)

    def test_reconstruction_matches_elementwise_sum(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        y = rng.standard_normal((3, 4)) + 1j * rng.standard_normal((3, 4))
        manual = sum(abs(a - b) ** 2 for a, b in zip(x.reshape(-1), y.reshape(-1)))
        assert loss_reconstruction(x, y) == pytest.approx(manual, rel=1e-12)

    def test_reconstruction_grad(self):
        x = np.array([1 + 1j, 0.0])
        xh = np.array([2.0 + 0j, 1j])
        np.testing.assert_allclose(loss_reconstruction_grad(x, xh), 2 * (xh - x))

    @pytest.mark.parametrize("mode", ["batch_max", "frame_mean"])
    def test_papr_constant_envelope_is_one(self, mode):
        assert loss_papr(np.exp(1j * np.linspace(0, 3, 32)), mode) == pytest.approx(1.0)

    @pytest.mark.parametrize("mode", ["batch_max", "frame_mean"])
    def test_papr_impulse_is_length(self, mode):
        frame = np.zeros(64, dtype=complex)
        frame[5] = 2.0
        assert loss_papr(frame, mode) == pytest.approx(64.0)

    def test_papr_zero_frame_rejected(self):
        with pytest.raises(DegenerateInputError):
            loss_papr(np.zeros(8))

    def test_papr_batch_max_is_global_peak_over_global_mean(self):
        rng = np.random.default_rng(9)
        frames = rng.standard_normal((4, 8)) + 1j * rng.standard_normal((4, 8))
        power = np.abs(frames) ** 2
        assert loss_papr(frames, "batch_max") == pytest.approx(
            power.max() / power.mean(), rel=1e-12
        )

    @pytest.mark.parametrize("mode", ["batch_max", "frame_mean"])
    def test_papr_grad_matches_finite_differences(self, mode):
        rng = np.random.default_rng(3)
        frames = rng.standard_normal((3, 16)) + 1j * rng.standard_normal((3, 16))
        grad = loss_papr_grad(frames, mode)
        h = 1e-6
        flat = frames.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in rng.choice(flat.size, 12, replace=False):
            for part, val in (("re", 1.0), ("im", 1j)):
                orig = flat[idx]
                flat[idx] = orig + h * val
                lp = loss_papr(frames, mode)
                flat[idx] = orig - h * val
                lm = loss_papr(frames, mode)
                flat[idx] = orig
                fd = (lp - lm) / (2 * h)
                an = gflat[idx].real if part == "re" else gflat[idx].imag
                assert fd == pytest.approx(an, rel=1e-4, abs=1e-9)

    def test_total_loss(self):
        assert total_loss(2.0, 3.0, 0.1) == pytest.approx(2.3)
        assert total_loss(5.0, 100.0, 0.0) == 5.0
        with pytest.raises(ConfigurationError):
            total_loss(1.0, 1.0, -0.5)

    def test_cross_entropy_perfect_one_hot(self):
        probs = np.array([[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
        assert loss_cross_entropy(probs, np.array([1, 0])) == pytest.approx(0.0)

    def test_cross_entropy_uniform(self):
        probs = np.full((5, 4), 0.25)
        assert loss_cross_entropy(probs, np.zeros(5, dtype=int)) == pytest.approx(
            5 * np.log(4)
        )

    def test_cross_entropy_matches_per_slot_oracle(self):
        rng = np.random.default_rng(4)
        logits = rng.standard_normal((6, 4))
        probs = softmax_rows(logits)
        labels = rng.integers(0, 4, 6)
        manual = -sum(np.log(probs[i, labels[i]]) for i in range(6))
        assert loss_cross_entropy(probs, labels) == pytest.approx(manual, rel=1e-12)

    def test_cross_entropy_clamps_and_warns(self):
        probs = np.array([[1.0, 0.0]])
        with pytest.warns(UserWarning):
            val = loss_cross_entropy(probs, np.array([1]))
        assert val == pytest.approx(-np.log(1e-12))

    def test_softmax_cross_entropy_gradient(self):
        rng = np.random.default_rng(5)
        logits = rng.standard_normal((4, 3))
        labels = rng.integers(0, 3, 4)
        loss, grad, probs = softmax_cross_entropy(logits, labels)
        h = 1e-6
        flat = logits.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp = softmax_cross_entropy(logits, labels)[0]
            flat[idx] = orig - h
            lm = softmax_cross_entropy(logits, labels)[0]
            flat[idx] = orig
            assert (lp - lm) / (2 * h) == pytest.approx(gflat[idx], rel=1e-5, abs=1e-8)


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = {"w": np.array([1.0, -2.0])}
        state = adam_init(params)
        out = adam_step(params, {"w": np.zeros(2)}, state, 0.1)
        np.testing.assert_array_equal(out["w"], params["w"])

    def test_first_step_is_signed_learning_rate(self):
        params = {"w": np.array([0.0, 0.0])}
        state = adam_init(params)
        g = np.array([0.3, -4.0])
        out = adam_step(params, {"w": g}, state, 1e-3)
        np.testing.assert_allclose(out["w"], -1e-3 * np.sign(g), rtol=1e-6)

    def test_constant_gradient_steady_state(self):
        params = {"w": np.array([0.0])}
        state = adam_init(params)
        g = {"w": np.array([0.7])}
        prev = params["w"].copy()
        for _ in range(200):
            params = adam_step(params, g, state, 1e-3)
        step = prev - params["w"]
        # After convergence of the moment estimates each step has size ~lr.
        last = params["w"].copy()
        params = adam_step(params, g, state, 1e-3)
        assert abs((last - params["w"])[0]) == pytest.approx(1e-3, rel=1e-3)

    def test_nonfinite_gradient_aborts(self):
        params = {"w": np.zeros(2)}
        state = adam_init(params)
        with pytest.raises(TrainingDivergedError):
            adam_step(params, {"w": np.array([np.nan, 0.0])}, state, 1e-3)


class TestPlumbing:
    def test_linear_backward_shapes_and_values(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((7, 3))
        w = rng.standard_normal((3, 5))
        b = rng.standard_normal(5)
        out, cache = linear_forward(x, w, b)
        g = rng.standard_normal(out.shape)
        gx, gw, gb = linear_backward(g, cache)
        np.testing.assert_allclose(gx, g @ w.T)
        np.testing.assert_allclose(gw, x.T @ g)
        np.testing.assert_allclose(gb, g.sum(axis=0))

    def test_relu_masks_gradient(self):
        x = np.array([[-1.0, 2.0, 0.0]])
        out, mask = relu_forward(x)
        np.testing.assert_array_equal(out, [[0.0, 2.0, 0.0]])
        np.testing.assert_array_equal(relu_backward(np.ones_like(x), mask), [[0.0, 1.0, 0.0]])

    def test_glorot_bounds(self):
        rng = np.random.default_rng(7)
        w = glorot_uniform(rng, 30, 50)
        a = np.sqrt(6.0 / 80.0)
        assert w.shape == (30, 50)
        assert np.max(np.abs(w)) <= a
