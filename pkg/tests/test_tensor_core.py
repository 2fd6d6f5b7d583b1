"""Unit tests for the tensor ops, anchored by independent oracles.

The convolution oracle is a direct quadruple-loop sum; gradients are checked
against central finite differences of scalar probes through the forward ops.
"""

import io

import numpy as np
import pytest

from rfrdenoise.errors import NumericsError, ShapeMismatchError
from rfrdenoise.tensor_core import (AdamState, ConvLayerParams, adam_step,
                                    add, conv2d_backward, conv2d_forward,
                                    mae, mae_grad, mse, mse_grad,
                                    read_tensor, relu_backward, relu_forward,
                                    scale, sub, write_tensor)


def conv_oracle(x, layer):
    """Direct-sum cross-correlation with explicit boundary handling."""
    w, bias, mode = layer.weights, layer.bias, layer.padding_mode
    out_ch, in_ch, kh, kw = w.shape
    _, H, W = x.shape
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    out = np.zeros((out_ch, H, W))

    def pick(c, y, xx):
        if mode == "circular":
            return x[c, y % H, xx % W]
        if mode == "replicate":
            return x[c, min(max(y, 0), H - 1), min(max(xx, 0), W - 1)]
        if 0 <= y < H and 0 <= xx < W:
            return x[c, y, xx]
        return 0.0

    for o in range(out_ch):
        for y in range(H):
            for xx in range(W):
                acc = bias[o]
                for c in range(in_ch):
                    for di in range(kh):
                        for dj in range(kw):
                            acc += w[o, c, di, dj] * pick(c, y + di - ph,
                                                          xx + dj - pw)
                out[o, y, xx] = acc
    return out


def central_diff(f, x, h=1e-5):
    """Gradient of scalar f at x by central differences, element by element."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f()
        flat[i] = orig - h
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * h)
    return g


def rel_err(a, b):
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)
    return np.max(np.abs(a - b)) / denom


class TestConvForward:
    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        x = rng.random((2, 6, 7))
        layer = ConvLayerParams(weights=np.eye(2).reshape(2, 2, 1, 1),
                                bias=np.zeros(2))
        assert np.array_equal(conv2d_forward(x, layer), x)

    def test_zero_weights_give_bias(self):
        x = np.random.default_rng(2).random((1, 5, 5))
        layer = ConvLayerParams(weights=np.zeros((3, 1, 3, 3)),
                                bias=np.array([0.25, -1.0, 2.0]))
        out = conv2d_forward(x, layer)
        for o, b in enumerate([0.25, -1.0, 2.0]):
            assert np.all(out[o] == b)

    @pytest.mark.parametrize("mode", ["circular", "zero", "replicate"])
    def test_matches_direct_sum_oracle(self, mode):
        rng = np.random.default_rng(3)
        x = rng.random((1, 5, 5))
        layer = ConvLayerParams(weights=rng.standard_normal((1, 1, 3, 3)),
                                bias=rng.standard_normal(1),
                                padding_mode=mode)
        assert np.max(np.abs(conv2d_forward(x, layer) - conv_oracle(x, layer))) < 1e-12

    @pytest.mark.parametrize("shape,kernel", [((2, 7, 9), (3, 3)),
                                              ((3, 6, 6), (1, 1)),
                                              ((1, 8, 5), (5, 3))])
    def test_oracle_on_more_shapes(self, shape, kernel):
        rng = np.random.default_rng(hash(shape) % 2**32)
        x = rng.random(shape)
        layer = ConvLayerParams(
            weights=rng.standard_normal((2, shape[0]) + kernel),
            bias=rng.standard_normal(2))
        assert np.max(np.abs(conv2d_forward(x, layer) - conv_oracle(x, layer))) < 1e-12

    def test_circular_shift_equivariance(self):
        rng = np.random.default_rng(4)
        x = rng.random((2, 12, 10))
        layer = ConvLayerParams(weights=rng.standard_normal((2, 2, 3, 3)),
                                bias=rng.standard_normal(2))
        for dx, dy in [(1, 0), (0, 1), (3, 7), (-2, 5)]:
            shifted = np.roll(x, (dy, dx), axis=(1, 2))
            lhs = conv2d_forward(shifted, layer)
            rhs = np.roll(conv2d_forward(x, layer), (dy, dx), axis=(1, 2))
            assert np.max(np.abs(lhs - rhs)) <= 1e-12

    def test_channel_mismatch_raises(self):
        layer = ConvLayerParams(weights=np.zeros((1, 3, 3, 3)), bias=np.zeros(1))
        with pytest.raises(ShapeMismatchError):
            conv2d_forward(np.zeros((2, 5, 5)), layer)

    def test_even_kernel_rejected(self):
        with pytest.raises(ValueError):
            ConvLayerParams(weights=np.zeros((1, 1, 2, 2)), bias=np.zeros(1))

    def test_batched_equals_per_frame(self):
        rng = np.random.default_rng(5)
        x = rng.random((3, 2, 8, 8))
        layer = ConvLayerParams(weights=rng.standard_normal((4, 2, 3, 3)),
                                bias=rng.standard_normal(4))
        batched = conv2d_forward(x, layer)
        for i in range(3):
            assert np.array_equal(batched[i], conv2d_forward(x[i], layer))


class TestConvBackward:
    def test_zero_grad_out(self):
        rng = np.random.default_rng(6)
        x = rng.random((2, 5, 5))
        layer = ConvLayerParams(weights=rng.standard_normal((2, 2, 3, 3)),
                                bias=rng.standard_normal(2))
        gx, gw, gb = conv2d_backward(x, layer, np.zeros((2, 5, 5)))
        assert not gx.any() and not gw.any() and not gb.any()

    def test_single_pixel_identity(self):
        layer = ConvLayerParams(weights=np.ones((1, 1, 1, 1)), bias=np.zeros(1))
        g = np.zeros((1, 4, 4))
        g[0, 2, 1] = 3.5
        gx, _, _ = conv2d_backward(np.zeros((1, 4, 4)), layer, g)
        assert np.array_equal(gx, g)

    @pytest.mark.parametrize("mode", ["circular", "zero", "replicate"])
    def test_gradients_match_finite_differences(self, mode):
        rng = np.random.default_rng(7)
        x = rng.random((1, 4, 4))
        w = rng.standard_normal((2, 1, 3, 3))
        b = rng.standard_normal(2)
        probe = rng.standard_normal((2, 4, 4))

        def loss():
            layer = ConvLayerParams(weights=w, bias=b, padding_mode=mode)
            return float(np.sum(conv2d_forward(x, layer) * probe))

        layer = ConvLayerParams(weights=w, bias=b, padding_mode=mode)
        gx, gw, gb = conv2d_backward(x, layer, probe)
        assert rel_err(gx, central_diff(loss, x)) < 1e-4
        assert rel_err(gw, central_diff(loss, w)) < 1e-4
        assert rel_err(gb, central_diff(loss, b)) < 1e-4

    def test_grad_out_shape_checked(self):
        layer = ConvLayerParams(weights=np.zeros((1, 1, 3, 3)), bias=np.zeros(1))
        with pytest.raises(ShapeMismatchError):
            conv2d_backward(np.zeros((1, 5, 5)), layer, np.zeros((1, 4, 5)))


class TestElementwise:
    def test_relu_roundtrip(self):
        x = np.array([[-1.0, 0.0, 2.0]])
        assert np.array_equal(relu_forward(x), [[0.0, 0.0, 2.0]])
        g = np.array([[5.0, 7.0, 11.0]])
        assert np.array_equal(relu_backward(x, g), [[0.0, 0.0, 11.0]])

    def test_relu_gradient_matches_fd(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((3, 5)) + 0.05  # keep clear of the kink
        probe = rng.standard_normal((3, 5))

        def loss():
            return float(np.sum(relu_forward(x) * probe))

        assert rel_err(relu_backward(x, probe), central_diff(loss, x)) < 1e-4

    def test_add_sub_scale(self):
        a = np.array([1.0, 2.0])
        b = np.array([0.5, -1.0])
        assert np.array_equal(add(a, b), [1.5, 1.0])
        assert np.array_equal(sub(a, b), [0.5, 3.0])
        assert np.array_equal(scale(a, 2.0), [2.0, 4.0])
        with pytest.raises(ShapeMismatchError):
            add(a, np.zeros(3))

    def test_mse_mae_exact(self):
        x = np.full((4, 4), 0.5)
        y = np.full((4, 4), 0.6)
        assert mse(x, x) == 0.0
        assert abs(mse(x, y) - 0.01) < 1e-15
        assert abs(mae(x, y) - 0.1) < 1e-15

    def test_loss_gradients_match_fd(self):
        rng = np.random.default_rng(9)
        a = rng.random((3, 4))
        b = rng.random((3, 4))
        assert rel_err(mse_grad(a, b), central_diff(lambda: mse(a, b), a)) < 1e-4
        assert rel_err(mae_grad(a, b), central_diff(lambda: mae(a, b), a)) < 1e-4


class TestAdam:
    def test_zero_grad_no_move(self):
        p = np.array([1.0, -2.0])
        new_p, st = adam_step(p, np.zeros(2), AdamState.fresh(p), lr=0.1)
        assert np.array_equal(new_p, p)
        assert st.step_count == 1

    def test_constant_grad_moves_against_sign(self):
        p = np.zeros(3)
        g = np.array([1.0, -1.0, 2.0])
        st = AdamState.fresh(p)
        for _ in range(50):
            p, st = adam_step(p, g, st, lr=0.01)
        assert p[0] < 0 and p[1] > 0 and p[2] < 0
        assert st.step_count == 50

    def test_single_step_closed_form(self):
        # g=1, lr=0.1: m_hat = v_hat = 1, so the step is lr / (1 + eps).
        p = np.array([0.7])
        new_p, _ = adam_step(p, np.array([1.0]), AdamState.fresh(p), lr=0.1)
        expected = 0.7 - 0.1 * 1.0 / (np.sqrt(1.0) + 1e-8)
        assert abs(new_p[0] - expected) < 1e-12

    def test_nonfinite_grad_rejected_without_partial_update(self):
        p = np.array([1.0])
        st = AdamState.fresh(p)
        with pytest.raises(NumericsError):
            adam_step(p, np.array([np.nan]), st, lr=0.1)
        assert st.step_count == 0
        assert not st.m.any()


class TestTensorFile:
    def test_roundtrip(self):
        arr = np.random.default_rng(10).random((2, 3, 4))
        buf = io.BytesIO()
        write_tensor(buf, arr)
        buf.seek(0)
        back = read_tensor(buf)
        assert np.array_equal(back, arr)
        assert back.dtype == np.float64

    def test_header_layout(self):
        buf = io.BytesIO()
        write_tensor(buf, np.zeros((2, 1)))
        raw = buf.getvalue()
        assert raw[:4] == b"RFRT"
        assert raw[4:8] == (2).to_bytes(4, "little")
        assert raw[8:12] == (2).to_bytes(4, "little")
        assert raw[12:16] == (1).to_bytes(4, "little")
        assert len(raw) == 16 + 2 * 8

    def test_truncated_payload_rejected(self):
        buf = io.BytesIO()
        write_tensor(buf, np.zeros(4))
        raw = buf.getvalue()[:-8]
        with pytest.raises(ValueError, match="truncated"):
            read_tensor(io.BytesIO(raw))
