from typing import List, NamedTuple, Optional, Tuple

import numpy as np

from agents.base_agent import BaseController
from agents.ilqr_agent import ILQRController
from config import config
from models.data_models import ActionDistribution, ControlInput, Method, Observation, VehicleState
from services.observation import ObservationEncoder
from services.policy_network import (
    PolicyNetwork, PolicyWeights, action_to_control, greedy_action, nearest_action, sample_action,
)


class StepRecord(NamedTuple):
    obs: Observation
    action: int
    prob: float  # pi(action | obs) under the current weights
    importance_weight: float


class PolicyController(BaseController):
    """Acts with the policy network: samples while training, arg-max when evaluating"""
    method = Method.DRL

    def __init__(self, weights: PolicyWeights, greedy: bool = True, record: bool = False):
        super().__init__("drl")
        self.weights = weights
        self.network = PolicyNetwork(weights.config)
        self.greedy = greedy
        self.record = record
        self.transcript: List[StepRecord] = []
        self.encoder: Optional[ObservationEncoder] = None
        self.goal: Tuple[float, float] = (0.0, 0.0)
        self.u_max = 1.0
        self.rng: Optional[np.random.Generator] = None

    def reset(self, env, start: VehicleState, goal: Tuple[float, float],
              rng: np.random.Generator) -> None:
        self.encoder = ObservationEncoder(env.field, env.obstacle_map(), self.weights.config.grid_size,
                                          env.time_scale)
        self.goal = goal
        self.u_max = env.motion.u_max
        self.rng = rng
        self.transcript = []

    def distribution(self, obs: Observation) -> ActionDistribution:
        result = self.network.forward(self.weights, obs.env[None], obs.vehicle[None])
        return ActionDistribution(probs=result.probs[0], logits=result.logits[0])

    def act(self, state: VehicleState, t: float) -> ControlInput:
        if self.encoder is None:
            raise RuntimeError("reset() must be called before act()")
        obs = self.encoder.encode(state, self.goal, t)
        dist = self.distribution(obs)
        action = greedy_action(dist) if self.greedy else sample_action(dist, self.rng)
        if self.record:
            self.transcript.append(StepRecord(obs, action, float(dist.probs[action]), 1.0))
        return action_to_control(action, self.weights.config.n_actions, self.u_max)


class GuidedController(PolicyController):
    """iLQR drives the vehicle; its controls are snapped to the nearest discrete action.

    Each recorded step carries the importance weight min(pi(a|s) / q, cap) where
    q is the probability the guide puts on its own action.
    """
    method = Method.ILQR

    def __init__(self, weights: PolicyWeights, guide: ILQRController,
                 guide_probability: float = config.GUIDED_Q, importance_cap: float = config.IMPORTANCE_CAP):
        super().__init__(weights, greedy=True, record=True)
        self.agent_id = "guided"
        self.guide = guide
        self.guide_probability = guide_probability
        self.importance_cap = importance_cap

    def reset(self, env, start: VehicleState, goal: Tuple[float, float],
              rng: np.random.Generator) -> None:
        super().reset(env, start, goal, rng)
        self.guide.reset(env, start, goal, rng)

    def act(self, state: VehicleState, t: float) -> ControlInput:
        obs = self.encoder.encode(state, self.goal, t)
        n_actions = self.weights.config.n_actions
        action = nearest_action(self.guide.act(state, t).u, n_actions, self.u_max)
        prob = float(self.distribution(obs).probs[action])
        weight = min(prob / self.guide_probability, self.importance_cap)
        self.transcript.append(StepRecord(obs, action, prob, weight))
        return action_to_control(action, n_actions, self.u_max)
