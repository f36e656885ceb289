"""Forward-pass contracts of the numeric core, checked against naive oracles."""

import numpy as np
import pytest

from anomkit import numcore as nc
from anomkit.errors import DimensionError, ParameterError, TrainingError
from anomkit.rng import Rng

from helpers import rel_err


def conv_loop_oracle(x, kernels, bias):
    """Direct triple-loop valid convolution, independent of the im2col path."""
    h, w, cin = x.shape
    k, _, _, cout = kernels.shape
    out = np.zeros((h - k + 1, w - k + 1, cout))
    for i in range(h - k + 1):
        for j in range(w - k + 1):
            for o in range(cout):
                acc = bias[o]
                for a in range(k):
                    for b in range(k):
                        for c in range(cin):
                            acc += x[i + a, j + b, c] * kernels[a, b, c, o]
                out[i, j, o] = acc
    return out


class TestConv2d:
    def test_identity_kernel(self):
        rng = Rng(1)
        x = rng.uniform(size=(5, 7, 1)).astype(np.float32)
        k = np.ones((1, 1, 1, 1), np.float32)
        out = nc.conv2d_valid(x, k, np.zeros(1, np.float32))
        assert np.allclose(out, x)

    def test_sum_of_ones(self):
        x = np.ones((3, 3, 1), np.float32)
        k = np.ones((3, 3, 1, 1), np.float32)
        out = nc.conv2d_valid(x, k, np.zeros(1, np.float32))
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 9.0

    def test_matches_loop_oracle(self):
        rng = Rng(2)
        x = rng.normal(size=(5, 5, 2))
        k = rng.normal(size=(3, 3, 2, 4))
        b = rng.normal(size=4)
        out = nc.conv2d_valid(x, k, b)
        assert out.shape == (3, 3, 4)
        assert rel_err(out, conv_loop_oracle(x, k, b)) <= 1e-6

    def test_shape_errors(self):
        x = np.zeros((2, 2, 1), np.float32)
        k = np.zeros((3, 3, 1, 1), np.float32)
        with pytest.raises(DimensionError):
            nc.conv2d_valid(x, k, np.zeros(1, np.float32))
        with pytest.raises(DimensionError):
            nc.conv2d_valid(np.zeros((4, 4, 2), np.float32), k, np.zeros(1, np.float32))


class TestMaxpool:
    def test_constant_input_tie_break(self):
        x = np.full((4, 4, 2), 3.5, np.float32)
        out, sw = nc.maxpool(x, 2)
        assert np.all(out == 3.5)
        assert np.all(sw.index == 0)  # ties go to the window origin

    def test_single_window(self):
        x = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)[:, :, None]
        out, sw = nc.maxpool(x, 2)
        assert out.shape == (1, 1, 1)
        assert out[0, 0, 0] == 4.0
        assert sw.index[0, 0, 0] == 3

    def test_matches_window_scan_oracle(self):
        rng = Rng(3)
        x = rng.normal(size=(9, 9, 3))
        out, sw = nc.maxpool(x, 3)
        assert out.shape == (3, 3, 3)
        for i in range(3):
            for j in range(3):
                for c in range(3):
                    win = x[3 * i : 3 * i + 3, 3 * j : 3 * j + 3, c]
                    assert out[i, j, c] == win.max()
                    assert sw.index[i, j, c] == win.ravel().argmax()

    def test_trailing_rows_dropped(self):
        x = np.arange(5 * 7, dtype=np.float32).reshape(5, 7, 1)
        out, _ = nc.maxpool(x, 2)
        assert out.shape == (2, 3, 1)

    def test_bad_pool_size(self):
        with pytest.raises(ParameterError):
            nc.maxpool(np.zeros((4, 4, 1), np.float32), 0)


class TestUnpool:
    def test_places_values_at_argmax(self):
        rng = Rng(4)
        x = rng.normal(size=(6, 6, 2)).astype(np.float32)
        pooled, sw = nc.maxpool(x, 2)
        up = nc.unpool(pooled, sw)
        nonzero = up != 0
        # nonzeros are exactly the window maxima, at their original positions
        assert nonzero.sum() == pooled.size
        assert np.all(up[nonzero] == x[nonzero])
        assert sorted(up[nonzero].tolist()) == sorted(pooled.ravel().tolist())

    def test_zero_input(self):
        x = np.zeros((4, 4, 1), np.float32)
        pooled, sw = nc.maxpool(x, 2)
        assert np.all(nc.unpool(np.zeros_like(pooled), sw) == 0)

    def test_pool_unpool_pool_idempotent(self):
        # on the non-negative intensity domain the zero fill never wins a window
        rng = Rng(5)
        x = rng.uniform(size=(9, 12, 4)).astype(np.float32)
        pooled, sw = nc.maxpool(x, 3)
        again, _ = nc.maxpool(nc.unpool(pooled, sw), 3)
        assert np.array_equal(again, pooled)

    def test_geometry_mismatch(self):
        x = np.zeros((4, 4, 1), np.float32)
        pooled, sw = nc.maxpool(x, 2)
        with pytest.raises(DimensionError):
            nc.unpool(pooled, sw, out_shape=(6, 6, 1))
        with pytest.raises(DimensionError):
            nc.unpool(np.zeros((3, 3, 1), np.float32), sw)


class TestDeconv2d:
    def test_adjoint_identity(self):
        rng = Rng(6)
        for trial in range(5):
            x = rng.normal(size=(6, 7, 3))
            kern = rng.normal(size=(3, 3, 3, 5))
            y = rng.normal(size=(4, 5, 5))
            lhs = np.sum(nc.conv2d_valid(x, kern, np.zeros(5)) * y)
            rhs = np.sum(x * nc.deconv2d(y, kern))
            assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) <= 1e-5

    def test_identity_kernel(self):
        rng = Rng(7)
        x = rng.uniform(size=(4, 4, 1)).astype(np.float32)
        k = np.ones((1, 1, 1, 1), np.float32)
        assert np.allclose(nc.deconv2d(x, k), x)

    def test_zero_kernel(self):
        x = np.ones((4, 4, 2), np.float32)
        k = np.zeros((3, 3, 1, 2), np.float32)
        out = nc.deconv2d(x, k)
        assert out.shape == (6, 6, 1)
        assert np.all(out == 0)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            nc.deconv2d(np.zeros((4, 4, 3), np.float32), np.zeros((3, 3, 1, 2), np.float32))


class TestElu:
    def test_closed_forms(self):
        assert nc.elu(np.float64(1.0)) == 1.0
        assert nc.elu(np.float64(0.0)) == 0.0
        assert abs(nc.elu(np.float64(-1.0)) - (np.exp(-1.0) - 1.0)) < 1e-12

    def test_continuous_and_monotone(self):
        xs = np.linspace(-4, 4, 2001)
        ys = nc.elu(xs, alpha=1.0)
        assert np.all(np.diff(ys) > 0)
        assert abs(nc.elu(np.float64(1e-9)) - nc.elu(np.float64(-1e-9))) < 1e-8

    def test_alpha_validation(self):
        with pytest.raises(ParameterError):
            nc.elu(np.zeros(3), alpha=0.0)


class TestDropout:
    def test_rate_zero_identity(self):
        x = np.ones((10, 10), np.float32)
        out, mask = nc.dropout(x, 0.0, Rng(0), training=True)
        assert np.array_equal(out, x)
        assert np.all(mask == 1)

    def test_inference_identity(self):
        x = np.ones((10, 10), np.float32)
        out, _ = nc.dropout(x, 0.9, Rng(0), training=False)
        assert np.array_equal(out, x)

    def test_inverted_scaling_mean(self):
        x = np.ones(100_000, np.float32)
        out, _ = nc.dropout(x, 0.5, Rng(42), training=True)
        assert abs(out.mean() - 1.0) <= 0.02
        survivors = out[out != 0]
        assert np.allclose(survivors, 2.0)

    def test_rate_validation(self):
        with pytest.raises(ParameterError):
            nc.dropout(np.zeros(3), 1.0, Rng(0))
        with pytest.raises(ParameterError):
            nc.dropout(np.zeros(3), -0.1, Rng(0))

    def test_same_seed_same_mask(self):
        x = np.ones(1000, np.float32)
        _, m1 = nc.dropout(x, 0.3, Rng(7), training=True)
        _, m2 = nc.dropout(x, 0.3, Rng(7), training=True)
        assert np.array_equal(m1, m2)


class TestMse:
    def test_zero_on_equal(self):
        x = np.arange(12.0).reshape(3, 4)
        assert nc.mse(x, x) == 0.0

    def test_unit_case(self):
        assert nc.mse(np.zeros(2), np.ones(2)) == 1.0

    def test_matches_loop_oracle(self):
        rng = Rng(8)
        x = rng.normal(size=(4, 5))
        y = rng.normal(size=(4, 5))
        acc = 0.0
        for i in range(4):
            for j in range(5):
                acc += (x[i, j] - y[i, j]) ** 2
        assert abs(nc.mse(x, y) - acc / 20.0) <= 1e-7

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            nc.mse(np.zeros(3), np.zeros(4))


class TestSgdStep:
    def test_plain_step(self):
        p = [np.array([1.0])]
        g = [np.array([2.0])]
        new_p, _ = nc.sgd_step(p, g, lr=0.1, momentum=0.0)
        assert np.allclose(new_p[0], 0.8)

    def test_zero_gradient(self):
        p = [np.array([1.0, -2.0])]
        new_p, _ = nc.sgd_step(p, [np.zeros(2)], lr=0.5)
        assert np.array_equal(new_p[0], p[0])

    def test_momentum_recurrence(self):
        # hand recurrence: v1 = -lr*g; p1 = p0+v1; v2 = m*v1 - lr*g; p2 = p1+v2
        lr, m, g = 0.1, 0.9, 2.0
        p = [np.array([1.0])]
        grads = [np.array([g])]
        p1, v1 = nc.sgd_step(p, grads, lr=lr, momentum=m)
        p2, v2 = nc.sgd_step(p1, grads, lr=lr, momentum=m, velocity=v1)
        v1_hand = -lr * g
        p1_hand = 1.0 + v1_hand
        v2_hand = m * v1_hand - lr * g
        p2_hand = p1_hand + v2_hand
        assert np.allclose(p1[0], p1_hand)
        assert np.allclose(p2[0], p2_hand)

    def test_nan_gradient_rejected(self):
        with pytest.raises(TrainingError):
            nc.sgd_step([np.zeros(1)], [np.array([np.nan])], lr=0.1)

    def test_param_validation(self):
        with pytest.raises(ParameterError):
            nc.sgd_step([np.zeros(1)], [np.zeros(1)], lr=0.0)
        with pytest.raises(ParameterError):
            nc.sgd_step([np.zeros(1)], [np.zeros(1)], lr=0.1, momentum=1.0)
