"""Primitive forward semantics against brute-force oracles.

Exact-equality checks use random integer-lattice float64 inputs: every
intermediate product and sum is an exactly representable integer, so the
result is independent of accumulation order on any IEEE-754 platform.
Real-valued inputs are checked at 1e-13 relative tolerance.
"""

import numpy as np
import pytest

from sbdnas import tensor as tz
from sbdnas.tensor import BatchNormState, ShapeError, Tensor


def int_lattice(rng, shape, lo=-8, hi=9):
    return rng.integers(lo, hi, size=shape).astype(np.float64)


# ---------------------------------------------------------------------------
# oracles


def conv2d_oracle(x, w, b):
    N, T, H, W, Cin = x.shape
    Cout = w.shape[-1]
    out = np.empty((N, T, H, W, Cout))
    for n in range(N):
        for t in range(T):
            for h in range(H):
                for ww in range(W):
                    for o in range(Cout):
                        acc = b[o]
                        for dy in range(3):
                            for dx in range(3):
                                iy, ix = h + dy - 1, ww + dx - 1
                                if 0 <= iy < H and 0 <= ix < W:
                                    for c in range(Cin):
                                        acc += x[n, t, iy, ix, c] * w[dy, dx, c, o]
                        out[n, t, h, ww, o] = acc
    return out


def conv1d_oracle(x, w, b, d):
    N, T, H, W, Cin = x.shape
    Cout = w.shape[-1]
    out = np.empty((N, T, H, W, Cout))
    for n in range(N):
        for t in range(T):
            for h in range(H):
                for ww in range(W):
                    for o in range(Cout):
                        acc = b[o]
                        for j in range(3):
                            it = t + (j - 1) * d
                            if 0 <= it < T:
                                for c in range(Cin):
                                    acc += x[n, it, h, ww, c] * w[j, c, o]
                        out[n, t, h, ww, o] = acc
    return out


def linear_oracle(x, w, b):
    M, K = x.shape
    N = w.shape[1]
    out = np.empty((M, N))
    for i in range(M):
        for j in range(N):
            acc = b[j]
            for k in range(K):
                acc += x[i, k] * w[k, j]
            out[i, j] = acc
    return out


# ---------------------------------------------------------------------------
# conv2d_spatial


class TestConv2dSpatial:
    def test_identity_kernel(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((2, 3, 5, 6, 4))
        w = np.zeros((3, 3, 4, 4))
        for c in range(4):
            w[1, 1, c, c] = 1.0
        out = tz.conv2d_spatial(Tensor(x), Tensor(w), Tensor(np.zeros(4)))
        assert np.array_equal(out.data, x)

    def test_zero_input_linearity(self):
        rng = np.random.default_rng(1)
        w = rng.standard_normal((3, 3, 2, 5))
        x = np.zeros((1, 2, 4, 4, 2))
        out = tz.conv2d_spatial(Tensor(x), Tensor(w), Tensor(np.zeros(5)))
        assert np.array_equal(out.data, np.zeros((1, 2, 4, 4, 5)))

    def test_brute_force_exact_on_integer_lattice(self):
        rng = np.random.default_rng(2)
        for _ in range(5):
            x = int_lattice(rng, (1, 2, 4, 4, 3))
            w = int_lattice(rng, (3, 3, 3, 2))
            b = int_lattice(rng, (2,))
            out = tz.conv2d_spatial(Tensor(x), Tensor(w), Tensor(b))
            assert np.array_equal(out.data, conv2d_oracle(x, w, b))

    def test_brute_force_on_random_reals(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 1, 4, 4, 2))
        w = rng.standard_normal((3, 3, 2, 3))
        b = rng.standard_normal(3)
        out = tz.conv2d_spatial(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, conv2d_oracle(x, w, b), rtol=1e-13, atol=1e-13)

    def test_shape_mismatch_rejected(self):
        x = Tensor(np.zeros((1, 1, 4, 4, 3)))
        w = Tensor(np.zeros((3, 3, 2, 4)))
        with pytest.raises(ShapeError, match="channels"):
            tz.conv2d_spatial(x, w, Tensor(np.zeros(4)))

    def test_linearity(self):
        rng = np.random.default_rng(4)
        w = Tensor(rng.standard_normal((3, 3, 2, 3)))
        b = Tensor(np.zeros(3))
        x1 = rng.standard_normal((1, 2, 4, 5, 2))
        x2 = rng.standard_normal((1, 2, 4, 5, 2))
        a, bb = 1.7, -0.3
        lhs = tz.conv2d_spatial(Tensor(a * x1 + bb * x2), w, b).data
        rhs = a * tz.conv2d_spatial(Tensor(x1), w, b).data \
            + bb * tz.conv2d_spatial(Tensor(x2), w, b).data
        np.testing.assert_allclose(lhs, rhs, atol=1e-10)


# ---------------------------------------------------------------------------
# conv1d_temporal


class TestConv1dTemporal:
    def test_identity_kernel_dilation4(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((1, 10, 2, 2, 3))
        w = np.zeros((3, 3, 3))
        for c in range(3):
            w[1, c, c] = 1.0
        out = tz.conv1d_temporal(Tensor(x), Tensor(w), Tensor(np.zeros(3)), dilation=4)
        assert np.array_equal(out.data, x)

    def test_pure_shift(self):
        x = np.arange(1.0, 6.0).reshape(1, 5, 1, 1, 1)
        w = np.array([1.0, 0.0, 0.0]).reshape(3, 1, 1)
        out = tz.conv1d_temporal(Tensor(x), Tensor(w), Tensor(np.zeros(1)), dilation=2)
        assert out.data.reshape(-1).tolist() == [0.0, 0.0, 1.0, 2.0, 3.0]

    def test_brute_force_exact_on_integer_lattice(self):
        rng = np.random.default_rng(6)
        x = int_lattice(rng, (1, 8, 2, 2, 3))
        w = int_lattice(rng, (3, 3, 2))
        b = int_lattice(rng, (2,))
        out = tz.conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), dilation=2)
        assert np.array_equal(out.data, conv1d_oracle(x, w, b, 2))

    def test_brute_force_on_random_reals(self):
        rng = np.random.default_rng(7)
        x = rng.standard_normal((1, 8, 2, 2, 3))
        w = rng.standard_normal((3, 3, 2))
        b = rng.standard_normal(2)
        out = tz.conv1d_temporal(Tensor(x), Tensor(w), Tensor(b), dilation=2)
        np.testing.assert_allclose(out.data, conv1d_oracle(x, w, b, 2), rtol=1e-13, atol=1e-13)

    def test_bad_dilation_rejected(self):
        x = Tensor(np.zeros((1, 4, 2, 2, 1)))
        with pytest.raises(ValueError, match="dilation"):
            tz.conv1d_temporal(x, Tensor(np.zeros((3, 1, 1))), Tensor(np.zeros(1)), dilation=0)


# ---------------------------------------------------------------------------
# batch norm


class TestBatchNorm:
    def test_already_normalized_passthrough(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((64, 4, 2, 2, 3))
        x -= x.mean(axis=(0, 1, 2, 3))
        x /= x.std(axis=(0, 1, 2, 3))
        state = BatchNormState(3)
        out = tz.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), state)
        np.testing.assert_allclose(out.data, x, atol=1e-4)

    def test_constant_input_collapses_to_beta(self):
        x = np.full((2, 3, 2, 2, 4), 7.5)
        beta = np.arange(4.0)
        state = BatchNormState(4)
        out = tz.batch_norm(Tensor(x), Tensor(np.ones(4)), Tensor(beta), state)
        np.testing.assert_allclose(out.data, np.broadcast_to(beta, x.shape), atol=1e-12)

    def test_train_moments(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((4, 6, 2, 2, 3)) * 3.0 + 1.5
        state = BatchNormState(3)
        out = tz.batch_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), state)
        mean = out.data.mean(axis=(0, 1, 2, 3))
        var = out.data.var(axis=(0, 1, 2, 3))
        # independent recomputation of the post-normalization moments
        assert np.all(np.abs(mean) < 1e-10)
        assert np.all(np.abs(var - 1.0) < 1e-4)

    def test_eval_uses_running_stats(self):
        rng = np.random.default_rng(10)
        state = BatchNormState(2)
        state.mean = np.array([1.0, -1.0])
        state.var = np.array([4.0, 0.25])
        x = rng.standard_normal((1, 3, 2, 2, 2))
        out = tz.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)),
                            state, mode="eval")
        expect = (x - state.mean) / np.sqrt(state.var + 1e-5)
        np.testing.assert_allclose(out.data, expect, rtol=1e-12)

    def test_running_stats_updated_with_momentum(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((8, 4, 2, 2, 2)) + 5.0
        state = BatchNormState(2)
        mu = x.mean(axis=(0, 1, 2, 3))
        var = x.var(axis=(0, 1, 2, 3))
        tz.batch_norm(Tensor(x), Tensor(np.ones(2)), Tensor(np.zeros(2)), state)
        np.testing.assert_allclose(state.mean, 0.1 * mu, rtol=1e-12)
        np.testing.assert_allclose(state.var, 0.9 * 1.0 + 0.1 * var, rtol=1e-12)


# ---------------------------------------------------------------------------
# elementwise / structural


class TestSimpleOps:
    def test_relu(self):
        out = tz.relu(Tensor([-1.0, 0.0, 2.0]))
        assert out.data.tolist() == [0.0, 0.0, 2.0]

    def test_concat_channels(self):
        rng = np.random.default_rng(12)
        x = rng.standard_normal((2, 3, 2))
        y = rng.standard_normal((2, 3, 3))
        out = tz.concat_channels([Tensor(x), Tensor(y)])
        assert out.shape == (2, 3, 5)
        assert np.array_equal(out.data[..., :2], x)
        assert np.array_equal(out.data[..., 2:], y)

    def test_concat_dim_disagreement_rejected(self):
        with pytest.raises(ShapeError):
            tz.concat_channels([Tensor(np.zeros((2, 3, 2))), Tensor(np.zeros((2, 4, 2)))])

    def test_add_dim_disagreement_rejected(self):
        with pytest.raises(ShapeError):
            tz.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))

    def test_linear_matches_triple_loop_oracle(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 4))
        w = rng.standard_normal((4, 3))
        b = rng.standard_normal(3)
        out = tz.linear(Tensor(x), Tensor(w), Tensor(b))
        np.testing.assert_allclose(out.data, linear_oracle(x, w, b), rtol=1e-13)

    def test_linear_exact_on_integer_lattice(self):
        rng = np.random.default_rng(14)
        x = int_lattice(rng, (5, 8))
        w = int_lattice(rng, (8, 4))
        b = int_lattice(rng, (4,))
        out = tz.linear(Tensor(x), Tensor(w), Tensor(b))
        assert np.array_equal(out.data, linear_oracle(x, w, b))

    def test_avg_pool(self):
        x = np.arange(2 * 5 * 4 * 1, dtype=np.float64).reshape(1, 2, 5, 4, 1)
        out = tz.avg_pool_spatial(Tensor(x))
        assert out.shape == (1, 2, 2, 2, 1)
        assert out.data[0, 0, 0, 0, 0] == (x[0, 0, 0, 0, 0] + x[0, 0, 0, 1, 0]
                                           + x[0, 0, 1, 0, 0] + x[0, 0, 1, 1, 0]) / 4

    def test_pad_channels(self):
        x = Tensor(np.ones((2, 3)))
        out = tz.pad_channels(x, 5)
        assert out.shape == (2, 5)
        assert np.array_equal(out.data[:, 3:], np.zeros((2, 2)))


# ---------------------------------------------------------------------------
# attention


class TestAttention:
    def _params(self, d, rng):
        return tz.init_attention_params(d, rng)

    def test_single_token_weight_is_one(self):
        rng = np.random.default_rng(15)
        params = self._params(6, rng)
        x = rng.standard_normal((2, 1, 6))
        aw = tz.attention_weights(x, params)
        assert np.array_equal(aw, np.ones((2, 1, 1)))
        out = tz.self_attention_layer(Tensor(x), params)
        v = x @ params["wv"].data + params["bv"].data
        expect = x + (v @ params["wo"].data + params["bo"].data)
        np.testing.assert_allclose(out.data, expect, rtol=1e-12)

    def test_identical_tokens_identical_outputs(self):
        rng = np.random.default_rng(16)
        params = self._params(5, rng)
        tok = rng.standard_normal(5)
        x = np.broadcast_to(tok, (1, 4, 5)).copy()
        out = tz.self_attention_layer(Tensor(x), params).data
        for t in range(1, 4):
            np.testing.assert_allclose(out[0, t], out[0, 0], rtol=1e-12)

    def test_matches_direct_softmax_oracle(self):
        rng = np.random.default_rng(17)
        d = 8
        params = self._params(d, rng)
        x = rng.standard_normal((1, 4, d))
        out = tz.self_attention_layer(Tensor(x), params).data

        q = x @ params["wq"].data + params["bq"].data
        k = x @ params["wk"].data + params["bk"].data
        v = x @ params["wv"].data + params["bv"].data
        s = q @ np.swapaxes(k, -1, -2) / np.sqrt(d)
        e = np.exp(s)
        a = e / e.sum(axis=-1, keepdims=True)
        expect = x + (a @ v) @ params["wo"].data + params["bo"].data
        np.testing.assert_allclose(out, expect, rtol=1e-10)

        aw = tz.attention_weights(x, params)
        np.testing.assert_allclose(aw.sum(axis=-1), np.ones((1, 4)), atol=1e-12)

    def test_dim_mismatch_rejected(self):
        rng = np.random.default_rng(18)
        params = self._params(6, rng)
        with pytest.raises(ShapeError):
            tz.self_attention_layer(Tensor(np.zeros((1, 3, 4))), params)


# ---------------------------------------------------------------------------
# shape algebra property


class TestShapeAlgebra:
    def test_conv_shapes_over_random_dims(self):
        rng = np.random.default_rng(19)
        for _ in range(25):
            N, T, H, W = (int(rng.integers(1, 4)) for _ in range(4))
            cin, cout = int(rng.integers(1, 6)), int(rng.integers(1, 6))
            x = Tensor(rng.standard_normal((N, T, H, W, cin)))
            w2 = Tensor(rng.standard_normal((3, 3, cin, cout)))
            w1 = Tensor(rng.standard_normal((3, cin, cout)))
            b = Tensor(np.zeros(cout))
            assert tz.conv2d_spatial(x, w2, b).shape == (N, T, H, W, cout)
            d = int(rng.integers(1, 5))
            assert tz.conv1d_temporal(x, w1, b, d).shape == (N, T, H, W, cout)

    def test_zero_dim_tensor_rejected(self):
        with pytest.raises(ShapeError):
            Tensor(np.zeros((2, 0, 3)))
