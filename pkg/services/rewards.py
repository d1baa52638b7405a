"""Episode reward and its per-step credit assignment.

    r_s = 1 / sum_t pi(s_t, a_t) * |p_t - p_G|        (capped at r_max)
    r_d = 1 - exp(-D_min)
    r   = r_s                            on success
        = -(alpha * r_s + (1 - alpha) * r_d)  otherwise
"""
import math
from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from config import config
from models.data_models import Experience, Observation


class RewardTerms(NamedTuple):
    proximity: float  # r_s
    closest_approach: float  # r_d
    reward: float


def proximity_reward(distances: Sequence[float], probs_taken: Sequence[float],
                     r_max: float = config.R_MAX) -> float:
    distances = np.asarray(distances, dtype=float)
    probs_taken = np.asarray(probs_taken, dtype=float)
    if distances.shape != probs_taken.shape:
        raise ValueError("distances and probabilities must be aligned per step")
    denominator = float(np.dot(probs_taken, distances))
    if denominator <= 1.0 / r_max:
        return float(r_max)
    return 1.0 / denominator


def closest_approach_reward(d_min: float) -> float:
    if d_min < 0:
        raise ValueError("D_min must be >= 0")
    return -math.expm1(-d_min)


def combine_rewards(r_s: float, r_d: float, succeeded: bool, alpha: float = 0.9) -> float:
    if succeeded:
        return r_s
    return -(alpha * r_s + (1.0 - alpha) * r_d)


def episode_reward(positions: np.ndarray, probs_taken: Sequence[float], goal: Sequence[float],
                   succeeded: bool, alpha: float = 0.9, r_max: float = config.R_MAX) -> RewardTerms:
    """Reward of a finished episode.

    `positions` holds the path's (x, y) points, either one per action or one more
    (the final point). The proximity term weighs the point each action was taken
    from; D_min runs over every point.
    """
    positions = np.asarray(positions, dtype=float)
    probs_taken = np.asarray(probs_taken, dtype=float)
    if positions.ndim != 2 or len(positions) == 0:
        raise ValueError("path must contain at least one point")
    if len(positions) not in (len(probs_taken), len(probs_taken) + 1):
        raise ValueError("probabilities must align with the path steps")
    distances = np.hypot(positions[:, 0] - goal[0], positions[:, 1] - goal[1])
    r_s = proximity_reward(distances[:len(probs_taken)], probs_taken, r_max)
    r_d = closest_approach_reward(float(distances.min()))
    return RewardTerms(r_s, r_d, combine_rewards(r_s, r_d, succeeded, alpha))


def assign_rewards(observations: Sequence[Observation], actions: Sequence[int], reward: float,
                   gamma: float = 0.99,
                   importance_weights: Optional[Sequence[float]] = None,
                   policy_probs: Optional[Sequence[float]] = None) -> List[Experience]:
    """Spread the episode reward over its steps: Q_t = gamma^(T-1-t) * r"""
    if len(observations) != len(actions):
        raise ValueError("one action per observation expected")
    length = len(actions)
    weights = importance_weights if importance_weights is not None else [1.0] * length
    probs = policy_probs if policy_probs is not None else [None] * length
    if len(weights) != length or len(probs) != length:
        raise ValueError("one importance weight and probability per step expected")
    return [
        Experience(obs=obs, action=int(action), reward=gamma ** (length - 1 - t) * reward,
                   step_index=t, episode_length=length, importance_weight=float(weight),
                   policy_prob=None if prob is None else float(prob))
        for t, (obs, action, weight, prob) in enumerate(zip(observations, actions, weights, probs))
    ]
