"""
Tests for the feedforward network core.
"""

import numpy as np
import pytest


class TestMlpSpec:
    """Tests for network specifications."""

    def test_needs_input_and_output(self):
        """Test that a single layer size is rejected."""
        from otmap.nn import MlpSpec

        with pytest.raises(ValueError, match="at least an input"):
            MlpSpec((3,))

    def test_output_activation_cannot_be_relu(self):
        """Test that a ReLU output layer is rejected."""
        from otmap.nn import MlpSpec

        with pytest.raises(ValueError, match="identity or tanh"):
            MlpSpec((2, 4, 2), output_activation="relu")

    def test_dict_round_trip(self):
        """Test that a spec survives to_dict/from_dict."""
        from otmap.nn import MlpSpec

        spec = MlpSpec((2, 8, 2), output_activation="tanh")

        assert MlpSpec.from_dict(spec.to_dict()) == spec


class TestForwardBackward:
    """Tests for forward and backward passes."""

    def test_init_is_deterministic(self):
        """Test that the same seed gives the same weights."""
        from otmap.nn import MlpSpec, init

        a = init(MlpSpec((2, 5, 1)), seed=3)
        b = init(MlpSpec((2, 5, 1)), seed=3)

        for wa, wb in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(wa, wb)

    def test_forward_matches_manual_computation(self):
        """Test forward against an explicit two-layer ReLU network."""
        from otmap.nn import MlpParams, MlpSpec, forward

        W1 = np.array([[1.0, -1.0], [0.5, 2.0]])
        b1 = np.array([0.0, -1.0])
        W2 = np.array([[2.0], [1.0]])
        b2 = np.array([0.5])
        params = MlpParams(MlpSpec((2, 2, 1)), [W1, W2], [b1, b2])
        x = np.array([[1.0, 1.0], [-1.0, 0.0]])

        out, _ = forward(params, x)

        expected = np.maximum(x @ W1 + b1, 0.0) @ W2 + b2
        np.testing.assert_allclose(out, expected)

    def test_forward_rejects_wrong_input_width(self):
        """Test that inputs must match the first layer width."""
        from otmap.nn import MlpSpec, forward, init

        with pytest.raises(ValueError, match="expected input"):
            forward(init(MlpSpec((3, 4, 1)), 0), np.zeros((2, 2)))

    def test_tanh_output_is_bounded(self):
        """Test that tanh outputs lie in (-1, 1)."""
        from otmap.nn import MlpSpec, forward, init

        params = init(MlpSpec((2, 16, 2), output_activation="tanh"), 0).scaled(50.0)
        out, _ = forward(params, np.random.default_rng(0).standard_normal((64, 2)))

        assert np.all(np.abs(out) <= 1.0)

    @pytest.mark.parametrize("activation", ["identity", "tanh"])
    def test_gradients_match_finite_differences(self, activation):
        """Test backward against central differences on a squared loss."""
        from otmap.nn import MlpSpec, backward, forward, grad_check, init

        rng = np.random.default_rng(1)
        x = rng.standard_normal((6, 3))
        y = rng.standard_normal((6, 2))
        params = init(MlpSpec((3, 7, 5, 2), output_activation=activation), seed=2)

        def loss_fn(p):
            out, cache = forward(p, x)
            grads, _ = backward(p, cache, out - y)
            return 0.5 * float(np.sum((out - y) ** 2)), grads

        report = grad_check(params, loss_fn, tol=1e-5, n_checks=40)

        assert report.passed, report.worst

    def test_backward_returns_input_gradient(self):
        """Test that the input gradient of a linear layer is out_grad @ W.T."""
        from otmap.nn import MlpParams, MlpSpec, backward, forward

        W = np.array([[1.0, 2.0], [3.0, 4.0]])
        params = MlpParams(MlpSpec((2, 2)), [W], [np.zeros(2)])
        out, cache = forward(params, np.ones((1, 2)))

        _, g = backward(params, cache, np.array([[1.0, 0.0]]))

        np.testing.assert_allclose(g, [[1.0, 3.0]])


class TestAdam:
    """Tests for the Adam optimizer."""

    def test_first_step_moves_by_learning_rate(self):
        """Test that the first bias-corrected step has magnitude lr per coordinate."""
        from otmap.nn import adam_update

        value, _, _ = adam_update(np.array([1.0, 1.0]), np.array([3.0, -0.2]), np.zeros(2), np.zeros(2), 1, lr=0.1)

        np.testing.assert_allclose(value, [0.9, 1.1], atol=1e-6)

    def test_adam_minimizes_quadratic(self):
        """Test that Adam drives a linear regression loss down."""
        from otmap.nn import MlpSpec, adam_init, adam_step, backward, forward, init

        rng = np.random.default_rng(0)
        x = rng.standard_normal((64, 2))
        y = x @ np.array([[2.0], [-1.0]]) + 0.5
        params = init(MlpSpec((2, 1)), seed=0)
        state = adam_init(params)

        def loss(p):
            out, _ = forward(p, x)
            return float(np.mean((out - y) ** 2))

        start = loss(params)
        for _ in range(1500):
            out, cache = forward(params, x)
            grads, _ = backward(params, cache, 2 * (out - y) / len(x))
            params, state = adam_step(params, grads, state, lr=0.02)

        assert state.step == 1500
        assert loss(params) < 1e-2 * start

    def test_non_finite_gradient_raises(self):
        """Test that a NaN gradient raises NumericalError."""
        from otmap.exceptions import NumericalError
        from otmap.nn import MlpSpec, adam_init, adam_step, init

        params = init(MlpSpec((2, 1)), seed=0)
        grads = params.zeros_like()
        grads.weights[0][0, 0] = np.nan

        with pytest.raises(NumericalError):
            adam_step(params, grads, adam_init(params), lr=0.1)
