"""Tests for networks, adaptive activations, jets and parameter snapshots."""

import numpy as np
import pytest

from fracpinn.autodiff import Tensor, grad_params
from fracpinn.network import (
    ACTIVATIONS,
    activation_eval,
    forward,
    forward_jet,
    load_params,
    save_params,
    xavier_init,
)


def fixed_reference(kind, x):
    if kind == "sigmoid":
        return 1.0 / (1.0 + np.exp(-x))
    if kind == "swish":
        return x / (1.0 + np.exp(-x))
    if kind == "selu":
        return np.where(x > 0, 1.0507 * x, 1.0507 * 1.67326 * (np.exp(x) - 1.0))
    if kind == "relu":
        return np.maximum(0.0, x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "xtanh":
        return x * np.tanh(x)
    raise ValueError(kind)


class TestActivations:
    @pytest.mark.parametrize("kind", ACTIVATIONS)
    def test_adaptive_equals_fixed_at_unit_slope(self, kind):
        x = np.linspace(-5.0, 5.0, 1001)
        val, _, _ = activation_eval(kind, 1.0, 1.0, Tensor(x))
        np.testing.assert_allclose(val.value, fixed_reference(kind, x), atol=1e-15)

    @pytest.mark.parametrize("kind", [k for k in ACTIVATIONS if k != "relu"])
    def test_derivatives_match_finite_differences(self, kind):
        x = np.linspace(-3.0, 3.0, 41) + 0.01  # keep away from the selu kink
        a, n = 0.8, 3.0
        h1, h2 = 1e-6, 1e-4
        val, d1, d2 = activation_eval(kind, a, n, Tensor(x))
        up, _, _ = activation_eval(kind, a, n, Tensor(x + h1))
        down, _, _ = activation_eval(kind, a, n, Tensor(x - h1))
        fd1 = (up.value - down.value) / (2 * h1)
        np.testing.assert_allclose(d1.value, fd1, rtol=1e-6, atol=1e-8)
        up2, _, _ = activation_eval(kind, a, n, Tensor(x + h2))
        down2, _, _ = activation_eval(kind, a, n, Tensor(x - h2))
        fd2 = (up2.value - 2 * val.value + down2.value) / h2**2
        np.testing.assert_allclose(d2.value, fd2, rtol=2e-4, atol=1e-6)

    def test_swish_zero_at_origin(self):
        val, _, _ = activation_eval("swish", 1.0, 1.0, Tensor(np.array([0.0])))
        assert val.value[0] == 0.0

    def test_tanh_scaled_argument(self):
        val, _, _ = activation_eval("tanh", 2.0, 1.0, Tensor(np.array([0.5])))
        assert val.value[0] == pytest.approx(np.tanh(1.0), rel=1e-12)
        assert val.value[0] == pytest.approx(0.76159416, abs=1e-8)

    def test_sigmoid_midpoint_and_slope(self):
        val, d1, _ = activation_eval("sigmoid", 1.0, 1.0, Tensor(np.array([0.0])))
        assert val.value[0] == 0.5
        assert d1.value[0] == 0.25

    def test_slope_gradient_flows(self):
        a = Tensor(1.0)
        val, _, _ = activation_eval("swish", a, 1.0, Tensor(np.array([1.0])))
        (ga,) = grad_params(val.sum(), [a])
        h = 1e-7
        up, _, _ = activation_eval("swish", 1.0 + h, 1.0, Tensor(np.array([1.0])))
        down, _, _ = activation_eval("swish", 1.0 - h, 1.0, Tensor(np.array([1.0])))
        fd = (up.value[0] - down.value[0]) / (2 * h)
        assert ga == pytest.approx(fd, rel=1e-7)

    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown activation"):
            activation_eval("gelu", 1.0, 1.0, Tensor(np.array([0.0])))


class TestInitAndForward:
    def test_xavier_layer_statistics(self):
        net = xavier_init((100, 100, 1), seed=7)
        sample_var = float(np.var(net.weights[0].value))
        assert sample_var == pytest.approx(2.0 / 200.0, rel=0.2)

    def test_biases_zero_and_slope_one(self):
        net = xavier_init((2, 8, 1), seed=0)
        for b in net.biases:
            np.testing.assert_array_equal(b.value, 0.0)
        assert float(net.slope.value) == 1.0

    def test_same_seed_reproduces_parameters(self):
        a = xavier_init((3, 9, 9, 1), seed=42)
        b = xavier_init((3, 9, 9, 1), seed=42)
        for pa, pb in zip(a.params(), b.params()):
            np.testing.assert_array_equal(pa.value, pb.value)

    def test_zero_parameters_give_zero_output(self):
        net = xavier_init((2, 5, 1), seed=0)
        for w in net.weights:
            w.value = np.zeros_like(w.value)
        out = forward(net, np.array([0.3, 0.7]))
        assert float(out.value) == 0.0

    def test_single_affine_layer(self):
        net = xavier_init((3, 1), seed=1)
        net.weights[0].value = np.array([[1.0, 2.0, 3.0]])
        net.biases[0].value = np.array([0.5])
        out = forward(net, np.array([1.0, 1.0, 1.0]))
        assert float(out.value) == pytest.approx(6.5, rel=1e-15)

    def test_dimension_mismatch(self):
        net = xavier_init((2, 4, 1), seed=0)
        with pytest.raises(ValueError, match="input dimension"):
            forward(net, np.zeros(3))


class TestForwardJet:
    def test_value_matches_forward_bitwise(self):
        net = xavier_init((3, 10, 10, 1), seed=5)
        pts = np.random.default_rng(0).uniform(size=(3, 17))
        jet = forward_jet(net, pts, space_dim=2)
        out = forward(net, pts)
        np.testing.assert_array_equal(jet.value.value, out.value)

    @pytest.mark.parametrize("kind", ["swish", "tanh", "sigmoid", "xtanh"])
    def test_first_derivatives_vs_central_differences(self, kind):
        net = xavier_init((2, 12, 12, 1), seed=3, activation=kind)
        rng = np.random.default_rng(1)
        pts = rng.uniform(0.1, 0.9, size=(2, 20))
        jet = forward_jet(net, pts, space_dim=1, with_time=True)
        h = 1e-5
        for row, slot in ((0, jet.dx[0]), (1, jet.dt)):
            shift = np.zeros((2, 1))
            shift[row] = h
            fd = (forward(net, pts + shift).value - forward(net, pts - shift).value) / (2 * h)
            rel = np.abs(slot.value - fd) / (np.abs(fd) + 1e-12)
            assert np.max(rel) < 1e-6

    def test_second_derivatives_vs_central_differences(self):
        net = xavier_init((2, 12, 12, 1), seed=4)
        rng = np.random.default_rng(2)
        pts = rng.uniform(0.1, 0.9, size=(2, 20))
        jet = forward_jet(net, pts, space_dim=1)
        h = 1e-4
        shift = np.zeros((2, 1))
        shift[0] = h
        fd = (
            forward(net, pts + shift).value
            - 2 * forward(net, pts).value
            + forward(net, pts - shift).value
        ) / h**2
        rel = np.abs(jet.dxx[0].value - fd) / (np.abs(fd) + 1e-8)
        assert np.max(rel) < 1e-4

    def test_affine_network_has_zero_second_derivatives(self):
        net = xavier_init((2, 1), seed=0)
        pts = np.random.default_rng(3).uniform(size=(2, 9))
        jet = forward_jet(net, pts, space_dim=2)
        for slot in jet.dxx:
            np.testing.assert_array_equal(slot.value, 0.0)

    def test_parameter_gradients_through_jets(self):
        net = xavier_init((2, 8, 8, 1), seed=6)
        pts = np.random.default_rng(4).uniform(0.2, 0.8, size=(2, 10))

        def loss_tensor():
            jet = forward_jet(net, pts, space_dim=2)
            return (jet.dxx[0] * jet.dxx[0]).mean() + (jet.dx[1] * jet.value).sum()

        leaves = net.params()
        grads = grad_params(loss_tensor(), leaves)
        rng = np.random.default_rng(5)
        for _ in range(20):
            li = int(rng.integers(0, len(leaves)))
            leaf = leaves[li]
            idx = tuple(rng.integers(0, s) for s in leaf.value.shape)
            old = leaf.value[idx]
            leaf.value[idx] = old + 1e-6
            up = float(loss_tensor().value)
            leaf.value[idx] = old - 1e-6
            down = float(loss_tensor().value)
            leaf.value[idx] = old
            fd = (up - down) / 2e-6
            assert grads[li][idx] == pytest.approx(fd, rel=1e-4, abs=1e-9)


class TestSnapshots:
    def test_round_trip_is_bitwise(self, tmp_path):
        net = xavier_init((3, 11, 7, 1), seed=9, activation="tanh", scale_n=2.0)
        net.slope.value = np.asarray(1.37)
        path = tmp_path / "net.bin"
        save_params(net, str(path))
        other = load_params(str(path))
        assert other.widths == net.widths
        assert other.activation == net.activation
        assert other.scale_n == net.scale_n
        assert other.seed == net.seed
        for a, b in zip(net.params(), other.params()):
            np.testing.assert_array_equal(a.value, b.value)
