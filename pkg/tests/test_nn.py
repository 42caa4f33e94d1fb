"""Model construction, initialization, and prediction."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from clkit.nn import ModelSpec, forward, forward_many, init_params, predict_class, predict_proba


class TestModelSpec:
    def test_param_count_softmax_regression(self):
        spec = ModelSpec(input_dim=4, hidden_sizes=(), output_dim=3)
        assert spec.param_count == 4 * 3 + 3

    def test_bernoulli_head_needs_single_output(self):
        with pytest.raises(ValueError):
            ModelSpec(input_dim=2, output_dim=3, head="bernoulli")

    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(1, 7),
        st.lists(st.integers(1, 9), max_size=3),
        st.integers(1, 5),
    )
    def test_param_count_matches_init_length(self, d_in, hidden, d_out):
        spec = ModelSpec(input_dim=d_in, hidden_sizes=tuple(hidden), output_dim=d_out)
        assert init_params(spec, 0).shape == (spec.param_count,)


class TestInitParams:
    def test_biases_are_zero(self):
        spec = ModelSpec(input_dim=4, hidden_sizes=(), output_dim=3)
        theta = init_params(spec, 0)
        assert theta.shape == (15,)
        np.testing.assert_array_equal(theta[-3:], np.zeros(3))

    def test_deterministic_per_seed(self):
        spec = ModelSpec(input_dim=4, hidden_sizes=(5,), output_dim=3)
        np.testing.assert_array_equal(init_params(spec, 42), init_params(spec, 42))
        assert not np.array_equal(init_params(spec, 42), init_params(spec, 43))

    def test_weight_scale_is_inverse_sqrt_fan_in(self):
        # one wide layer gives 10^4 weight samples with fan_in 4
        spec = ModelSpec(input_dim=4, hidden_sizes=(2500,), output_dim=1, head="scalar")
        theta = init_params(spec, 0)
        w = theta[: 4 * 2500]
        assert abs(np.std(w) - 0.5) < 0.05 * 0.5


class TestForward:
    def test_zero_parameters_give_zero_logits(self):
        spec = ModelSpec(input_dim=3, hidden_sizes=(4,), output_dim=2)
        X = np.random.default_rng(0).normal(size=(5, 3))
        np.testing.assert_array_equal(forward(spec, np.zeros(spec.param_count), X), np.zeros((5, 2)))

    def test_swish_closed_form(self):
        # identity passthrough model exposes the activation: 1 input, 1 hidden unit
        spec = ModelSpec(input_dim=1, hidden_sizes=(1,), output_dim=1, head="scalar")
        theta = np.array([1.0, 0.0, 1.0, 0.0])  # w1=1 b1=0 w2=1 b2=0
        out = forward(spec, theta, np.array([[0.0], [1.0]]))
        np.testing.assert_allclose(out[0, 0], 0.0, atol=1e-15)
        np.testing.assert_allclose(out[1, 0], 1.0 / (1.0 + np.exp(-1.0)), rtol=1e-12)

    def test_matches_independent_matrix_reference(self):
        rng = np.random.default_rng(8)
        spec = ModelSpec(input_dim=2, hidden_sizes=(4,), output_dim=3)
        theta = rng.normal(size=spec.param_count)
        X = rng.normal(size=(6, 2))

        # re-implementation with explicit index arithmetic
        W1 = theta[:8].reshape(2, 4)
        b1 = theta[8:12]
        W2 = theta[12:24].reshape(4, 3)
        b2 = theta[24:27]
        z1 = X @ W1 + b1
        h1 = z1 / (1.0 + np.exp(-z1))
        expected = h1 @ W2 + b2

        assert np.max(np.abs(forward(spec, theta, X) - expected)) <= 1e-12

    def test_batched_equals_row_by_row(self):
        rng = np.random.default_rng(3)
        spec = ModelSpec(input_dim=3, hidden_sizes=(5,), output_dim=2)
        theta = rng.normal(size=spec.param_count)
        X = rng.normal(size=(7, 3))
        batched = forward(spec, theta, X)
        rows = np.vstack([forward(spec, theta, X[i : i + 1]) for i in range(7)])
        # matmul kernels differ by shape, so agreement is to round-off, not bitwise
        np.testing.assert_allclose(batched, rows, rtol=0, atol=1e-12)

    def test_dimension_mismatch_rejected(self):
        spec = ModelSpec(input_dim=3, hidden_sizes=(), output_dim=2)
        with pytest.raises(ValueError):
            forward(spec, np.zeros(spec.param_count), np.zeros((4, 5)))

    def test_forward_many_matches_loop(self):
        rng = np.random.default_rng(12)
        spec = ModelSpec(input_dim=3, hidden_sizes=(4,), output_dim=2)
        thetas = rng.normal(size=(5, spec.param_count))
        X = rng.normal(size=(6, 3))
        stacked = forward_many(spec, thetas, X)
        for s in range(5):
            np.testing.assert_allclose(stacked[s], forward(spec, thetas[s], X), atol=1e-12)


class TestPredict:
    def test_uniform_probabilities_for_zero_logits(self):
        spec = ModelSpec(input_dim=2, hidden_sizes=(), output_dim=3)
        p = predict_proba(spec, np.zeros(spec.param_count), np.zeros((1, 2)))
        np.testing.assert_allclose(p, np.full((1, 3), 1.0 / 3.0))

    def test_extreme_logits_do_not_overflow(self):
        spec = ModelSpec(input_dim=1, hidden_sizes=(), output_dim=3)
        # weights route feature to class 0 logit only
        theta = np.zeros(spec.param_count)
        theta[0] = 1000.0
        p = predict_proba(spec, theta, np.array([[1.0]]))
        np.testing.assert_allclose(p, [[1.0, 0.0, 0.0]], atol=1e-300)

    def test_bernoulli_zero_logit_is_half(self):
        spec = ModelSpec(input_dim=2, hidden_sizes=(), output_dim=1, head="bernoulli")
        p = predict_proba(spec, np.zeros(spec.param_count), np.zeros((1, 2)))
        np.testing.assert_allclose(p, [[0.5]])

    def test_scalar_head_has_no_probabilities(self):
        spec = ModelSpec(input_dim=2, hidden_sizes=(), output_dim=1, head="scalar")
        with pytest.raises(ValueError):
            predict_proba(spec, np.zeros(spec.param_count), np.zeros((1, 2)))

    def test_argmax_and_tie_break(self):
        spec = ModelSpec(input_dim=1, hidden_sizes=(), output_dim=3)
        theta = np.zeros(spec.param_count)
        theta[1] = 1.0  # class 1 logit follows the feature
        assert predict_class(spec, theta, np.array([[2.0]]))[0] == 1
        # all-zero logits tie; lowest index wins
        assert predict_class(spec, np.zeros(spec.param_count), np.array([[0.0]]))[0] == 0

    def test_bernoulli_threshold_maps_half_to_one(self):
        spec = ModelSpec(input_dim=1, hidden_sizes=(), output_dim=1, head="bernoulli")
        assert predict_class(spec, np.zeros(spec.param_count), np.array([[5.0]]))[0] == 1

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_probability_rows_are_distributions(self, seed):
        rng = np.random.default_rng(seed)
        spec = ModelSpec(input_dim=2, hidden_sizes=(3,), output_dim=4)
        theta = 3.0 * rng.normal(size=spec.param_count)
        p = predict_proba(spec, theta, rng.normal(size=(5, 2)))
        assert np.all(p >= 0) and np.all(p <= 1)
        np.testing.assert_allclose(p.sum(axis=1), np.ones(5), atol=1e-12)
