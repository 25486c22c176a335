"""Core operator tests: trivial identities, brute-force oracles, invariants."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import naive_conv2d, naive_sliding_max

from detkit import ops
from detkit.ops import ConvSpec
from detkit.tensor import ConfigError, Tensor


class TestConvForward:
    def test_out_size_same_padding(self):
        spec = ConvSpec(1, 1, kernel=3, stride=1, padding=1)
        assert spec.out_size(32) == 32

    def test_identity_kernel_reproduces_input(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 1, 4, 4))
        w = np.zeros((1, 1, 3, 3))
        w[0, 0, 1, 1] = 1.0
        out = ops.conv2d_forward(Tensor(x), Tensor(w), np.zeros(1), ConvSpec(1, 1, 3, 1, 1))
        assert np.allclose(out.data, x)

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(11)
        x = rng.standard_normal((2, 3, 8, 8))
        w = rng.standard_normal((4, 3, 3, 3))
        b = rng.standard_normal(4)
        got = ops.conv2d_forward(Tensor(x), Tensor(w), b, ConvSpec(3, 4, 3, 2, 1))
        want = naive_conv2d(x, w, b, stride=2, padding=1)
        assert np.max(np.abs(got.data - want)) <= 1e-10

    def test_matches_naive_oracle_many_configs(self):
        rng = np.random.default_rng(42)
        for _ in range(50):
            cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            k = int(rng.integers(1, 4))
            s = int(rng.integers(1, 3))
            p = int(rng.integers(0, 3))
            h = int(rng.integers(max(1, k - 2 * p), k + 5))
            if (h - k + 2 * p) // s + 1 < 1:
                continue
            x = rng.standard_normal((2, cin, h, h))
            w = rng.standard_normal((cout, cin, k, k))
            b = rng.standard_normal(cout)
            got = ops.conv2d_forward(Tensor(x), Tensor(w), b, ConvSpec(cin, cout, k, s, p))
            want = naive_conv2d(x, w, b, s, p)
            assert np.max(np.abs(got.data - want)) <= 1e-10

    def test_linearity_in_input(self):
        rng = np.random.default_rng(5)
        spec = ConvSpec(2, 3, 3, 1, 1)
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        x = rng.standard_normal((1, 2, 5, 5))
        y = rng.standard_normal((1, 2, 5, 5))
        a, b = 0.37, -1.9
        lhs = ops.conv2d_forward(Tensor(a * x + b * y), w, None, spec).data
        rhs = (a * ops.conv2d_forward(Tensor(x), w, None, spec).data
               + b * ops.conv2d_forward(Tensor(y), w, None, spec).data)
        assert np.max(np.abs(lhs - rhs)) < 1e-10

    def test_shape_mismatch_rejected(self):
        x = Tensor.zeros((1, 2, 4, 4))
        w = Tensor.zeros((1, 3, 3, 3))
        with pytest.raises(ConfigError):
            ops.conv2d_forward(x, w, None, ConvSpec(3, 1, 3, 1, 1))

    def test_too_small_input_rejected(self):
        spec = ConvSpec(1, 1, kernel=5, stride=1, padding=0)
        with pytest.raises(ConfigError):
            ops.conv2d_forward(Tensor.zeros((1, 1, 3, 3)), Tensor.zeros((1, 1, 5, 5)), None, spec)


class TestConvBackward:
    def test_zero_upstream_gives_zero_grads(self):
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((1, 2, 5, 5)))
        w = Tensor(rng.standard_normal((3, 2, 3, 3)))
        spec = ConvSpec(2, 3, 3, 1, 1)
        gx, gw, gb = ops.conv2d_backward(x, w, spec, Tensor.zeros((1, 3, 5, 5)))
        assert not gx.data.any() and not gw.data.any() and not gb.any()

    def test_scalar_chain_rule(self):
        # 1x1 input and kernel: d<g, w*x>/dw = g*x, /dx = g*w
        x = Tensor(np.full((1, 1, 1, 1), 3.0))
        w = Tensor(np.full((1, 1, 1, 1), -2.0))
        g = Tensor(np.full((1, 1, 1, 1), 5.0))
        gx, gw, gb = ops.conv2d_backward(x, w, ConvSpec(1, 1, 1), g)
        assert gw.data.item() == pytest.approx(15.0)
        assert gx.data.item() == pytest.approx(-10.0)
        assert gb.item() == pytest.approx(5.0)


class TestPooling:
    def test_constant_map(self):
        t = Tensor.full((1, 2, 3, 3), 0.7)
        for kind in ("avg", "max"):
            out = ops.global_pool(t, kind)
            assert out.shape == (1, 2, 1, 1)
            assert np.allclose(out.data, 0.7)

    def test_small_map_values(self):
        t = Tensor(np.array([[[[1.0, 2.0], [3.0, 4.0]]]]))
        assert ops.global_pool(t, "avg").data.item() == pytest.approx(2.5)
        assert ops.global_pool(t, "max").data.item() == pytest.approx(4.0)

    def test_matches_scan_oracle(self):
        rng = np.random.default_rng(9)
        x = rng.standard_normal((2, 3, 4, 5))
        got_avg = ops.global_pool(Tensor(x), "avg").data
        got_max = ops.global_pool(Tensor(x), "max").data
        for n in range(2):
            for c in range(3):
                vals = [x[n, c, i, j] for i in range(4) for j in range(5)]
                assert got_avg[n, c, 0, 0] == pytest.approx(sum(vals) / len(vals))
                assert got_max[n, c, 0, 0] == pytest.approx(max(vals))

    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            ops.global_pool(Tensor.zeros((1, 1, 2, 2)), "median")


class TestSpatialStats:
    def test_single_channel_duplicates(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal((1, 1, 3, 3))
        out = ops.spatial_stats(Tensor(x))
        assert np.allclose(out.data[:, 0], x[:, 0])
        assert np.allclose(out.data[:, 1], x[:, 0])

    def test_two_constant_channels(self):
        x = np.zeros((1, 2, 2, 2))
        x[0, 1] = 10.0
        out = ops.spatial_stats(Tensor(x))
        assert np.allclose(out.data[0, 0], 10.0)
        assert np.allclose(out.data[0, 1], 5.0)

    def test_matches_per_pixel_scan(self):
        rng = np.random.default_rng(8)
        x = rng.standard_normal((2, 5, 3, 4))
        out = ops.spatial_stats(Tensor(x)).data
        for n in range(2):
            for i in range(3):
                for j in range(4):
                    col = [x[n, c, i, j] for c in range(5)]
                    assert out[n, 0, i, j] == pytest.approx(max(col))
                    assert out[n, 1, i, j] == pytest.approx(sum(col) / 5)


class TestActivations:
    def test_relu_values(self):
        out = ops.activation(Tensor(np.array([[[[-1.0, 2.0]]]])), "relu")
        assert out.data.tolist() == [[[[0.0, 2.0]]]]

    def test_sigmoid_at_zero(self):
        out = ops.activation(Tensor.zeros((1, 1, 1, 1)), "sigmoid")
        assert out.data.item() == pytest.approx(0.5)

    def test_mish_values(self):
        # x tanh(log(1 + e^x)): exactly 0 at 0; at 20 the softplus saturates
        # to ~20 + 2e-9 and tanh to 1 - 4e-18, so the value is 20 within 1e-6
        x = Tensor(np.array([[[[0.0, 20.0]]]]))
        out = ops.activation(x, "mish")
        assert out.data[0, 0, 0, 0] == 0.0
        assert abs(out.data[0, 0, 0, 1] - 20.0) < 1e-6

    def test_relu_idempotent(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.standard_normal((2, 2, 3, 3)))
        once = ops.activation(x, "relu")
        twice = ops.activation(once, "relu")
        assert np.array_equal(once.data, twice.data)

    # beyond |x| ~ 36.7 float64 rounds sigmoid to exactly 0.0 / 1.0, so the
    # strict mathematical bound is only testable inside that range
    @given(st.floats(min_value=-36, max_value=36, allow_nan=False))
    def test_sigmoid_strictly_inside_unit_interval(self, v):
        out = ops.activation(Tensor(np.full((1, 1, 1, 1), v)), "sigmoid").data.item()
        assert 0.0 < out < 1.0


class TestFullyConnected:
    def test_identity_weight(self):
        x = np.array([1.0, -2.0, 3.0])
        out = ops.fully_connected(x, np.eye(3), np.zeros(3))
        assert np.allclose(out, x)

    def test_zero_weight_returns_bias(self):
        b = np.array([4.0, 5.0])
        out = ops.fully_connected(np.ones(3), np.zeros((2, 3)), b)
        assert np.allclose(out, b)

    def test_dim_mismatch(self):
        with pytest.raises(ConfigError):
            ops.fully_connected(np.ones(3), np.zeros((2, 4)), np.zeros(2))

    def test_batched_matches_rowwise(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((4, 3))
        w = rng.standard_normal((2, 3))
        b = rng.standard_normal(2)
        batched = ops.fully_connected(x, w, b)
        rows = np.stack([ops.fully_connected(x[i], w, b) for i in range(4)])
        assert np.allclose(batched, rows)


class TestSpp:
    def test_empty_windows_is_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((1, 3, 4, 4))
        out = ops.spp(Tensor(x), [])
        assert np.array_equal(out.data, x)

    def test_constant_input(self):
        x = Tensor.full((1, 2, 4, 4), 1.5)
        out = ops.spp(x, [3])
        assert out.shape == (1, 4, 4, 4)
        assert np.allclose(out.data, 1.5)

    def test_matches_sliding_max_oracle(self):
        rng = np.random.default_rng(13)
        x = rng.standard_normal((2, 2, 6, 7))
        out = ops.spp(Tensor(x), [3, 5]).data
        assert np.array_equal(out[:, 0:2], x)
        assert np.allclose(out[:, 2:4], naive_sliding_max(x, 3))
        assert np.allclose(out[:, 4:6], naive_sliding_max(x, 5))

    def test_even_window_rejected(self):
        with pytest.raises(ConfigError):
            ops.spp(Tensor.zeros((1, 1, 4, 4)), [4])


@settings(max_examples=60, deadline=None)
@given(
    in_size=st.integers(min_value=1, max_value=40),
    k=st.integers(min_value=1, max_value=7),
    p=st.integers(min_value=0, max_value=3),
    s=st.integers(min_value=1, max_value=3),
)
def test_conv_shape_law_matches_execution(in_size, k, p, s):
    """floor((in - k + 2p)/s) + 1 agrees with the executed output shape for
    every valid random configuration."""
    predicted = (in_size - k + 2 * p) // s + 1
    if predicted < 1 or in_size + 2 * p < k:
        return
    x = Tensor.zeros((1, 1, in_size, in_size))
    w = Tensor.zeros((1, 1, k, k))
    out = ops.conv2d_forward(x, w, None, ConvSpec(1, 1, k, s, p))
    assert out.h == predicted and out.w == predicted
