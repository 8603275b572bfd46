"""Layer primitives: forward contracts and finite-difference gradient checks."""

import numpy as np
import pytest

from f2cskel.layers import (
    conv3_backward,
    conv3_forward,
    dense_backward,
    dense_forward,
    maxpool2_backward,
    maxpool2_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
    softmax_cross_entropy_batch,
)


def fd_grad(f, x, eps=1e-6):
    """Central-difference gradient of scalar f at array x (independent oracle)."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def assert_close_grad(analytic, numeric, rtol=1e-4, atol=1e-7):
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric)
    bad = err > np.maximum(atol, rtol * denom)
    assert not bad.any(), f"max err {err.max()} at {np.unravel_index(err.argmax(), err.shape)}"


class TestConv:
    def test_zero_input_zero_bias_gives_zero(self, rng):
        x = np.zeros((2, 3, 5, 6))
        w = rng.standard_normal((4, 3, 3, 3))
        y, _ = conv3_forward(x, w, np.zeros(4))
        assert (y == 0).all()

    def test_delta_kernel_reproduces_input(self, rng):
        x = rng.standard_normal((1, 1, 6, 7))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0  # identity tap
        y, _ = conv3_forward(x, w, np.zeros(1))
        np.testing.assert_allclose(y, x, atol=1e-15)

    def test_same_padding_keeps_dims(self, rng):
        y, _ = conv3_forward(rng.standard_normal((3, 2, 9, 11)),
                             rng.standard_normal((5, 2, 3, 3)), rng.standard_normal(5))
        assert y.shape == (3, 5, 9, 11)

    def test_matches_direct_convolution(self, rng):
        # independent direct evaluation of the padded correlation
        x = rng.standard_normal((1, 2, 4, 5))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        y, _ = conv3_forward(x, w, b)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        for f in range(3):
            for i in range(4):
                for j in range(5):
                    want = b[f] + float(
                        (xp[0, :, i:i + 3, j:j + 3] * w[f]).sum()
                    )
                    assert abs(y[0, f, i, j] - want) < 1e-12

    def test_gradients_match_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        w = rng.standard_normal((4, 3, 3, 3)) * 0.5
        b = rng.standard_normal(4) * 0.1
        dy = rng.standard_normal((2, 4, 4, 5))

        def loss():
            y, _ = conv3_forward(x, w, b)
            return float((y * dy).sum())

        y, cache = conv3_forward(x, w, b)
        dx, dw, db = conv3_backward(dy, cache)
        assert_close_grad(dx, fd_grad(loss, x))
        assert_close_grad(dw, fd_grad(loss, w))
        assert_close_grad(db, fd_grad(loss, b))


class TestMaxpool:
    def test_floor_on_odd_dims(self, rng):
        y, _ = maxpool2_forward(rng.standard_normal((1, 2, 11, 7)))
        assert y.shape == (1, 2, 5, 3)

    def test_values_are_window_maxima(self, rng):
        x = rng.standard_normal((1, 1, 4, 4))
        y, _ = maxpool2_forward(x)
        for i in range(2):
            for j in range(2):
                assert y[0, 0, i, j] == x[0, 0, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()

    def test_tie_routes_to_first_in_row_major_order(self):
        x = np.zeros((1, 1, 2, 2))
        x[0, 0] = [[1.0, 1.0], [1.0, 1.0]]  # four-way tie
        y, cache = maxpool2_forward(x)
        dx = maxpool2_backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_array_equal(dx[0, 0], [[1.0, 0.0], [0.0, 0.0]])
        x[0, 0] = [[0.0, 2.0], [2.0, 2.0]]  # three-way tie, first is (0,1)
        y, cache = maxpool2_forward(x)
        dx = maxpool2_backward(np.ones((1, 1, 1, 1)), cache)
        np.testing.assert_array_equal(dx[0, 0], [[0.0, 1.0], [0.0, 0.0]])

    def test_cropped_strip_gets_zero_gradient(self, rng):
        x = rng.standard_normal((1, 1, 5, 5))
        y, cache = maxpool2_forward(x)
        dx = maxpool2_backward(np.ones_like(y), cache)
        assert (dx[:, :, 4, :] == 0).all()
        assert (dx[:, :, :, 4] == 0).all()

    def test_gradient_matches_finite_differences(self, rng):
        x = rng.standard_normal((2, 3, 6, 6))  # continuous: no ties
        dy = rng.standard_normal((2, 3, 3, 3))

        def loss():
            y, _ = maxpool2_forward(x)
            return float((y * dy).sum())

        _, cache = maxpool2_forward(x)
        dx = maxpool2_backward(dy, cache)
        assert_close_grad(dx, fd_grad(loss, x))


class TestDenseRelu:
    def test_dense_gradients(self, rng):
        x = rng.standard_normal((3, 7))
        w = rng.standard_normal((7, 4))
        b = rng.standard_normal(4)
        dy = rng.standard_normal((3, 4))

        def loss():
            y, _ = dense_forward(x, w, b)
            return float((y * dy).sum())

        _, cache = dense_forward(x, w, b)
        dx, dw, db = dense_backward(dy, cache)
        assert_close_grad(dx, fd_grad(loss, x))
        assert_close_grad(dw, fd_grad(loss, w))
        assert_close_grad(db, fd_grad(loss, b))

    def test_relu_masks_negatives(self):
        x = np.array([[-1.0, 0.0, 2.0]])
        y, mask = relu_forward(x)
        np.testing.assert_array_equal(y, [[0.0, 0.0, 2.0]])
        dx = relu_backward(np.ones_like(x), mask)
        np.testing.assert_array_equal(dx, [[0.0, 0.0, 1.0]])


class TestSoftmaxXent:
    def test_uniform_logits_loss_is_log_c(self):
        for c in (2, 5, 60):
            loss, grad = softmax_cross_entropy(np.zeros(c), 1)
            assert abs(loss - np.log(c)) < 1e-12
            assert abs(grad.sum()) < 1e-12

    def test_huge_margin_saturates(self):
        logits = np.zeros(4)
        logits[2] = 50.0
        loss, _ = softmax_cross_entropy(logits, 2)
        assert loss < 1e-20

    def test_grad_is_softmax_minus_onehot(self, rng):
        logits = rng.standard_normal(6)
        loss, grad = softmax_cross_entropy(logits, 3)
        p = softmax(logits)
        want = p.copy()
        want[3] -= 1.0
        np.testing.assert_allclose(grad, want, atol=1e-12)
        assert abs(grad.sum()) < 1e-12

    def test_extreme_logits_stay_finite(self):
        loss, grad = softmax_cross_entropy(np.array([1e4, -1e4, 0.0]), 1)
        assert np.isfinite(loss)
        assert np.isfinite(grad).all()

    def test_batch_mean_and_grad_scaling(self, rng):
        logits = rng.standard_normal((4, 5))
        labels = np.array([0, 2, 4, 1])
        loss, dlogits = softmax_cross_entropy_batch(logits, labels)
        singles = [softmax_cross_entropy(logits[i], labels[i]) for i in range(4)]
        assert abs(loss - np.mean([s[0] for s in singles])) < 1e-12
        np.testing.assert_allclose(dlogits, np.stack([s[1] for s in singles]) / 4, atol=1e-12)

    def test_batch_grad_matches_finite_differences(self, rng):
        logits = rng.standard_normal((3, 4))
        labels = np.array([1, 0, 3])

        def loss():
            l, _ = softmax_cross_entropy_batch(logits, labels)
            return l

        _, dlogits = softmax_cross_entropy_batch(logits, labels)

        g = np.zeros_like(logits)
        eps = 1e-6
        for idx in np.ndindex(*logits.shape):
            orig = logits[idx]
            logits[idx] = orig + eps
            hi = loss()
            logits[idx] = orig - eps
            lo = loss()
            logits[idx] = orig
            g[idx] = (hi - lo) / (2 * eps)
        assert_close_grad(dlogits, g)

    def test_bias_shift_leaves_softmax_unchanged(self, rng):
        logits = rng.standard_normal(7)
        np.testing.assert_allclose(softmax(logits), softmax(logits + 13.5), atol=1e-12)
