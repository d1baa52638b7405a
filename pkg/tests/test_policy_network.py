import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.signal import correlate2d

from models.data_models import ActionDistribution, NetworkConfig
from models.exceptions import ConfigurationError, ControlRangeError
from services.policy_network import (
    PolicyNetwork, PolicyWeights, action_to_control, conv_same, conv_same_input_grad,
    conv_same_kernel_grad, forward, greedy_action, log_prob_gradient, log_softmax, max_pool2,
    max_pool2_grad, nearest_action, parameter_shapes, sample_action, softmax,
)
from tests.conftest import random_observation


def batch(config: NetworkConfig, rng: np.random.Generator, n: int):
    g = config.grid_size
    return rng.normal(size=(n, 3, 3, g, g)), rng.normal(size=(n, 5))


def objective(network, weights, env, vehicle, actions, coefficients, seed=None):
    rng = None if seed is None else np.random.default_rng(seed)
    result = network.forward(weights, env, vehicle, train=seed is not None, rng=rng)
    log_probs = log_softmax(result.logits)[np.arange(len(actions)), actions]
    return float(np.dot(coefficients, log_probs))


class TestPrimitives:
    def test_conv_same_matches_scipy_correlation(self, rng):
        x = rng.normal(size=(2, 3, 6, 6))
        kernel = rng.normal(size=(4, 3, 3, 3))
        out = conv_same(x, kernel)
        for n in range(2):
            for o in range(4):
                expected = sum(correlate2d(x[n, c], kernel[o, c], mode="same") for c in range(3))
                np.testing.assert_allclose(out[n, o], expected, atol=1e-12)

    @pytest.mark.parametrize("k", [1, 3, 5])
    def test_input_grad_is_the_adjoint(self, rng, k):
        x = rng.normal(size=(2, 3, 8, 8))
        kernel = rng.normal(size=(4, 3, k, k))
        d = rng.normal(size=(2, 4, 8, 8))
        lhs = np.sum(conv_same(x, kernel) * d)
        rhs = np.sum(x * conv_same_input_grad(d, kernel))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_kernel_grad_is_the_adjoint(self, rng):
        x = rng.normal(size=(2, 3, 8, 8))
        kernel = rng.normal(size=(4, 3, 3, 3))
        d = rng.normal(size=(2, 4, 8, 8))
        lhs = np.sum(conv_same(x, kernel) * d)
        rhs = np.sum(kernel * conv_same_kernel_grad(x, d, 3))
        assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_max_pool_and_routing(self):
        x = np.arange(16, dtype=float).reshape(1, 1, 4, 4)
        pooled, winners = max_pool2(x)
        np.testing.assert_array_equal(pooled[0, 0], [[5, 7], [13, 15]])
        routed = max_pool2_grad(np.ones((1, 1, 2, 2)), winners)
        expected = np.zeros((4, 4))
        expected[1::2, 1::2] = 1.0
        np.testing.assert_array_equal(routed[0, 0], expected)

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=12), st.floats(-100, 100))
    def test_softmax_is_shift_invariant(self, logits, shift):
        logits = np.array(logits)
        np.testing.assert_allclose(softmax(logits + shift), softmax(logits), atol=1e-12)
        assert softmax(logits).sum() == pytest.approx(1.0)


class TestWeights:
    def test_init_bounds_and_zero_biases(self, tiny_config):
        weights = PolicyWeights.init(tiny_config, seed=5)
        for name, array in weights.items():
            if name.endswith(".b"):
                assert not array.any()
            else:
                fan_in = int(np.prod(array.shape[1:])) if array.ndim == 4 else array.shape[0]
                assert np.abs(array).max() <= 1.0 / math.sqrt(fan_in)

    def test_init_is_seeded(self, tiny_config):
        assert PolicyWeights.init(tiny_config, seed=5).allclose(PolicyWeights.init(tiny_config, seed=5))
        assert not PolicyWeights.init(tiny_config, seed=5).allclose(PolicyWeights.init(tiny_config, seed=6))

    def test_shape_mismatch_is_configuration_error(self, tiny_config):
        tensors = {name: np.zeros(shape) for name, shape in parameter_shapes(tiny_config).items()}
        tensors["fc1.W"] = np.zeros((3, 3))
        with pytest.raises(ConfigurationError):
            PolicyWeights(tiny_config, tensors)

    def test_missing_tensor_is_configuration_error(self, tiny_config):
        tensors = {name: np.zeros(shape) for name, shape in parameter_shapes(tiny_config).items()}
        del tensors["out.b"]
        with pytest.raises(ConfigurationError, match="out.b"):
            PolicyWeights(tiny_config, tensors)

    def test_default_sizes(self):
        shapes = parameter_shapes(NetworkConfig())
        assert shapes["rec1.W_d"] == (8, 3, 3, 3)
        assert shapes["fc1.W"] == (16 * 6 * 6 + 16, 128)
        assert shapes["out.W"] == (64, 9)


class TestForward:
    def test_zero_weights_give_uniform_policy(self, tiny_config, rng):
        dist = forward(PolicyWeights.zeros(tiny_config), random_observation(tiny_config, rng))
        np.testing.assert_allclose(dist.probs, np.full(9, 1 / 9))

    def test_probabilities_sum_to_one(self, tiny_config, rng):
        network = PolicyNetwork(tiny_config)
        env, vehicle = batch(tiny_config, rng, 6)
        result = network.forward(PolicyWeights.init(tiny_config), env, vehicle)
        np.testing.assert_allclose(result.probs.sum(axis=1), 1.0)
        assert np.all(result.probs > 0)

    def test_eval_mode_is_deterministic(self, tiny_config, rng):
        weights = PolicyWeights.init(tiny_config)
        obs = random_observation(tiny_config, rng)
        np.testing.assert_array_equal(forward(weights, obs).probs, forward(weights, obs).probs)

    def test_train_mode_reproducible_under_seed(self, tiny_config, rng):
        weights = PolicyWeights.init(tiny_config)
        obs = random_observation(tiny_config, rng)
        first = forward(weights, obs, train=True, rng=np.random.default_rng(9))
        second = forward(weights, obs, train=True, rng=np.random.default_rng(9))
        np.testing.assert_array_equal(first.probs, second.probs)

    def test_batch_matches_single_observations(self, tiny_config, rng):
        weights = PolicyWeights.init(tiny_config)
        env, vehicle = batch(tiny_config, rng, 3)
        batched = PolicyNetwork(tiny_config).forward(weights, env, vehicle).probs
        for i in range(3):
            single = PolicyNetwork(tiny_config).forward(weights, env[i:i + 1], vehicle[i:i + 1]).probs
            np.testing.assert_allclose(batched[i], single[0], atol=1e-12)

    def test_bad_input_shape(self, tiny_config):
        weights = PolicyWeights.zeros(tiny_config)
        with pytest.raises(ConfigurationError):
            PolicyNetwork(tiny_config).forward(weights, np.zeros((1, 3, 3, 16, 16)), np.zeros((1, 5)))
        with pytest.raises(ConfigurationError):
            PolicyNetwork(tiny_config).forward(weights, np.zeros((1, 3, 3, 8, 8)), np.zeros((1, 4)))


class TestBackward:
    @pytest.mark.parametrize("dropout_seed", [None, 17])
    def test_matches_finite_differences(self, rng, dropout_seed):
        config = NetworkConfig.tiny(dropout=0.3)
        network = PolicyNetwork(config)
        weights = PolicyWeights.init(config, seed=2)
        env, vehicle = batch(config, rng, 3)
        actions = np.array([0, 4, 8])
        coefficients = np.array([1.0, -0.5, 2.0])

        train_rng = None if dropout_seed is None else np.random.default_rng(dropout_seed)
        result = network.forward(weights, env, vehicle, train=dropout_seed is not None, rng=train_rng)
        grads = network.backward(weights, result.cache, actions, coefficients)

        eps = 1e-6
        picker = np.random.default_rng(0)
        for name, array in weights.items():
            norm = max(np.linalg.norm(grads[name]), 1e-8)
            for flat in picker.choice(array.size, size=min(4, array.size), replace=False):
                index = np.unravel_index(flat, array.shape)
                plus, minus = weights.copy(), weights.copy()
                plus.tensors[name][index] += eps
                minus.tensors[name][index] -= eps
                numeric = (objective(network, plus, env, vehicle, actions, coefficients, dropout_seed)
                           - objective(network, minus, env, vehicle, actions, coefficients, dropout_seed)) / (2 * eps)
                assert abs(numeric - grads[name][index]) <= 1e-4 * norm + 1e-8, name

    def test_zero_coefficient_gives_zero_gradient(self, tiny_config, rng):
        weights = PolicyWeights.init(tiny_config)
        grads = log_prob_gradient(weights, random_observation(tiny_config, rng), 3, coefficient=0.0)
        assert all(not g.any() for g in grads.values())

    def test_expected_score_vanishes(self, tiny_config, rng):
        network = PolicyNetwork(tiny_config)
        weights = PolicyWeights.init(tiny_config, seed=4)
        obs = random_observation(tiny_config, rng)
        k = tiny_config.n_actions
        env = np.repeat(obs.env[None], k, axis=0)
        vehicle = np.repeat(obs.vehicle[None], k, axis=0)
        result = network.forward(weights, env, vehicle)
        grads = network.backward(weights, result.cache, np.arange(k), result.probs[0])
        for name, grad in grads.items():
            np.testing.assert_allclose(grad, 0.0, atol=1e-10, err_msg=name)

    def test_gradient_names_follow_weight_order(self, tiny_config, rng):
        weights = PolicyWeights.init(tiny_config)
        grads = log_prob_gradient(weights, random_observation(tiny_config, rng), 1)
        assert list(grads) == list(weights)


class TestActions:
    def test_certain_distribution_always_picks_its_action(self, rng):
        probs = np.zeros(9)
        probs[0] = 1.0
        dist = ActionDistribution(probs=probs, logits=np.zeros(9))
        assert {sample_action(dist, rng) for _ in range(200)} == {0}

    def test_uniform_frequencies_within_three_sigma(self):
        k, draws = 9, 100_000
        dist = ActionDistribution(probs=np.full(k, 1 / k), logits=np.zeros(k))
        rng = np.random.default_rng(42)
        counts = np.bincount([sample_action(dist, rng) for _ in range(draws)], minlength=k)
        sigma = math.sqrt(draws * (1 / k) * (1 - 1 / k))
        assert np.all(np.abs(counts - draws / k) < 3 * sigma)

    def test_sampling_is_reproducible(self):
        dist = ActionDistribution(probs=softmax(np.linspace(-1, 1, 9)), logits=np.linspace(-1, 1, 9))
        first = [sample_action(dist, np.random.default_rng(3)) for _ in range(5)]
        rng_a, rng_b = np.random.default_rng(8), np.random.default_rng(8)
        assert [sample_action(dist, rng_a) for _ in range(20)] == [sample_action(dist, rng_b) for _ in range(20)]
        assert len(set(first)) == 1

    def test_greedy_picks_mode(self):
        probs = softmax(np.array([0.1, 2.0, -1.0]))
        assert greedy_action(ActionDistribution(probs=probs, logits=np.zeros(3))) == 1

    @pytest.mark.parametrize("index,expected", [(4, 0.0), (0, -math.pi / 4), (8, math.pi / 4), (6, math.pi / 8)])
    def test_action_to_control(self, index, expected):
        assert action_to_control(index).u == pytest.approx(expected, abs=1e-15)

    @pytest.mark.parametrize("index", [-1, 9])
    def test_action_out_of_range(self, index):
        with pytest.raises(ControlRangeError):
            action_to_control(index)

    def test_nearest_action_inverts_the_grid(self):
        for index in range(9):
            assert nearest_action(action_to_control(index).u) == index
        assert nearest_action(10.0) == 8
        assert nearest_action(-10.0) == 0
