import math

import numpy as np
import pytest

from models.data_models import Experience, NetworkConfig
from services.policy_gradient import CHUNK_SIZE, batch_gradient, update
from services.policy_network import PolicyWeights, forward
from tests.conftest import random_observation

CONFIG = NetworkConfig.tiny(dropout=0.0)


def experience(obs, action=2, reward=1.0, importance_weight=1.0, policy_prob=None) -> Experience:
    return Experience(obs=obs, action=action, reward=reward, step_index=0, episode_length=1,
                      importance_weight=importance_weight, policy_prob=policy_prob)


@pytest.fixture
def obs(rng):
    return random_observation(CONFIG, rng)


@pytest.fixture
def weights():
    return PolicyWeights.init(CONFIG, seed=1)


def test_zero_return_leaves_weights_unchanged(weights, obs):
    updated, stats = update(weights, [experience(obs, reward=0.0)], 0.5)
    assert updated.allclose(weights)
    assert stats.grad_norm == 0.0 and not stats.skipped


@pytest.mark.parametrize("reward", [1.0, -1.0])
def test_update_moves_probability_with_the_sign_of_the_return(weights, obs, reward):
    before = forward(weights, obs).probs[2]
    updated, _ = update(weights, [experience(obs, action=2, reward=reward)], 1e-2)
    after = forward(updated, obs).probs[2]
    assert (after - before) * reward > 0


def test_importance_weight_scales_the_step(weights, obs):
    grads_plain, _ = batch_gradient(weights, [experience(obs, reward=1.0)])
    grads_weighted, _ = batch_gradient(weights, [experience(obs, reward=1.0, importance_weight=2.5)])
    for name in grads_plain:
        np.testing.assert_allclose(grads_weighted[name], 2.5 * grads_plain[name], atol=1e-14)


@pytest.mark.parametrize("recorded_share, ratio", [(0.5, 2.0), (1.0, 1.0), (0.1, 5.0)])
def test_replayed_experience_is_reweighted_by_the_policy_drift(weights, obs, recorded_share, ratio):
    prob_now = forward(weights, obs).probs[2]
    grads_plain, _ = batch_gradient(weights, [experience(obs)])
    grads_replayed, _ = batch_gradient(weights, [experience(obs, policy_prob=recorded_share * prob_now)])
    for name in grads_plain:
        np.testing.assert_allclose(grads_replayed[name], ratio * grads_plain[name], rtol=1e-9, atol=1e-14)


def test_ratio_cap_is_configurable(weights, obs):
    prob_now = forward(weights, obs).probs[2]
    grads_plain, _ = batch_gradient(weights, [experience(obs)])
    grads_capped, _ = batch_gradient(weights, [experience(obs, policy_prob=0.1 * prob_now)], ratio_cap=1.0)
    for name in grads_plain:
        np.testing.assert_allclose(grads_capped[name], grads_plain[name], rtol=1e-9, atol=1e-14)


def test_replayed_failure_stops_pushing_once_its_action_is_rare(weights, obs):
    recorded = experience(obs, action=6, reward=-1.0, policy_prob=float(forward(weights, obs).probs[6]))
    norms = []
    for _ in range(300):
        weights, stats = update(weights, [recorded], 0.5)
        norms.append(stats.grad_norm)
    assert weights.is_finite()
    assert forward(weights, obs).probs[6] < 0.01
    assert norms[-1] < 0.1 * norms[0]


def test_duplicating_the_batch_changes_nothing(weights, obs, rng):
    other = random_observation(CONFIG, rng)
    batch = [experience(obs, action=1, reward=0.7), experience(other, action=5, reward=-0.2)]
    once, _ = update(weights, batch, 0.1)
    twice, _ = update(weights, batch * 2, 0.1)
    assert once.allclose(twice, atol=1e-12)


def test_chunked_batch_matches_the_single_experience(weights, obs):
    single, loss_single = batch_gradient(weights, [experience(obs)])
    many, loss_many = batch_gradient(weights, [experience(obs)] * (CHUNK_SIZE + 2))
    for name in single:
        np.testing.assert_allclose(many[name], single[name], atol=1e-12)
    assert loss_many == pytest.approx(loss_single)


def test_loss_is_negative_weighted_log_probability(weights, obs):
    _, loss = batch_gradient(weights, [experience(obs, action=3, reward=2.0)])
    assert loss == pytest.approx(-2.0 * math.log(forward(weights, obs).probs[3]))


def test_non_finite_gradient_skips_the_update(weights, obs):
    updated, stats = update(weights, [experience(obs, importance_weight=math.inf)], 0.1)
    assert stats.skipped
    assert updated is weights


def test_empty_batch_is_rejected(weights):
    with pytest.raises(ValueError):
        update(weights, [], 0.1)


def test_repeated_positive_updates_make_the_action_certain(weights, obs):
    probs = [forward(weights, obs).probs[4]]
    for _ in range(200):
        weights, _ = update(weights, [experience(obs, action=4, reward=1.0)], 0.5)
        probs.append(forward(weights, obs).probs[4])
    assert probs[-1] > 0.9
    tail = np.array(probs[50:])
    assert np.all(np.diff(tail) >= -1e-9)
