import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from models.data_models import Observation
from services.rewards import (
    assign_rewards, closest_approach_reward, combine_rewards, episode_reward, proximity_reward,
)

probabilities = st.floats(0.01, 1.0)
distances = st.floats(0.0, 60.0)


def observations(n: int):
    return [Observation(env=np.zeros((3, 3, 8, 8)), vehicle=np.zeros(5)) for _ in range(n)]


class TestEpisodeReward:
    def test_success_pays_the_proximity_term(self):
        terms = episode_reward(np.array([[2.0, 0.0], [1.0, 0.0]]), [0.5, 0.5], (0.0, 0.0), True)
        assert terms.proximity == pytest.approx(2 / 3)
        assert terms.reward == pytest.approx(2 / 3)

    def test_failure_blends_both_terms(self):
        r_d = closest_approach_reward(math.log(2))
        assert r_d == pytest.approx(0.5)
        assert combine_rewards(2 / 3, r_d, False, alpha=0.9) == pytest.approx(-0.65)

    def test_final_point_counts_for_closest_approach_only(self):
        path = np.array([[5.0, 0.0], [3.0, 0.0], [0.5, 0.0]])
        terms = episode_reward(path, [1.0, 1.0], (0.0, 0.0), False)
        assert terms.proximity == pytest.approx(1 / 8)
        assert terms.closest_approach == pytest.approx(1 - math.exp(-0.5))

    def test_zero_distance_is_capped(self):
        assert proximity_reward([0.0, 0.0], [0.7, 0.2], r_max=10.0) == 10.0

    def test_closest_approach_at_goal_is_zero(self):
        assert closest_approach_reward(0.0) == 0.0

    def test_negative_distance_rejected(self):
        with pytest.raises(ValueError):
            closest_approach_reward(-1.0)

    def test_misaligned_path(self):
        with pytest.raises(ValueError):
            episode_reward(np.zeros((5, 2)), [0.5, 0.5], (0.0, 0.0), True)

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(probabilities, distances), min_size=1, max_size=30))
    def test_success_reward_is_positive_and_bounded(self, steps):
        probs, dists = (np.array(column) for column in zip(*steps))
        r_s = proximity_reward(dists, probs, r_max=10.0)
        assert 0.0 < r_s <= 10.0

    @settings(max_examples=100, deadline=None)
    @given(st.lists(st.tuples(probabilities, distances), min_size=1, max_size=30), st.floats(0.0, 1.0))
    def test_failure_reward_is_never_positive(self, steps, alpha):
        probs, dists = (np.array(column) for column in zip(*steps))
        r_s = proximity_reward(dists, probs)
        r_d = closest_approach_reward(float(dists.min()))
        assert 0.0 <= r_d <= 1.0
        assert combine_rewards(r_s, r_d, False, alpha) <= 0.0

    @settings(max_examples=50, deadline=None)
    @given(st.lists(distances, min_size=1, max_size=20), st.floats(0.1, 10.0))
    def test_closer_paths_earn_more(self, dists, shrink):
        dists = np.array(dists) + 0.2
        probs = np.full(dists.size, 0.5)
        near = proximity_reward(dists / (1.0 + shrink), probs, r_max=1e9)
        far = proximity_reward(dists, probs, r_max=1e9)
        assert near >= far


    @settings(max_examples=200, deadline=None)
    @given(distances, distances)
    def test_closest_approach_term_grows_with_the_miss_distance(self, d1, d2):
        near, far = sorted((d1, d2))
        assert 0.0 <= closest_approach_reward(near) <= closest_approach_reward(far) <= 1.0


class TestAssignRewards:
    def test_discounting_toward_the_start(self):
        experiences = assign_rewards(observations(3), [1, 2, 3], 8.0, gamma=0.5)
        assert [e.reward for e in experiences] == pytest.approx([2.0, 4.0, 8.0])
        assert [e.step_index for e in experiences] == [0, 1, 2]
        assert all(e.episode_length == 3 for e in experiences)

    def test_undiscounted(self):
        experiences = assign_rewards(observations(4), [0, 0, 0, 0], -0.3, gamma=1.0)
        assert all(e.reward == -0.3 for e in experiences)

    def test_zero_reward(self):
        assert all(e.reward == 0.0 for e in assign_rewards(observations(3), [0, 1, 2], 0.0))

    def test_importance_weights_are_kept_apart(self):
        experiences = assign_rewards(observations(2), [0, 1], 1.0, gamma=1.0, importance_weights=[0.5, 2.0])
        assert [e.reward for e in experiences] == [1.0, 1.0]
        assert [e.importance_weight for e in experiences] == [0.5, 2.0]

    def test_recorded_probabilities_travel_with_each_step(self):
        experiences = assign_rewards(observations(3), [0, 1, 2], 1.0, policy_probs=[0.2, 0.5, 1.0])
        assert [e.policy_prob for e in experiences] == [0.2, 0.5, 1.0]
        assert all(e.policy_prob is None for e in assign_rewards(observations(2), [0, 1], 1.0))

    def test_mismatched_probabilities(self):
        with pytest.raises(ValueError):
            assign_rewards(observations(2), [0, 1], 1.0, policy_probs=[0.5])

    def test_mismatched_actions(self):
        with pytest.raises(ValueError):
            assign_rewards(observations(2), [0], 1.0)
