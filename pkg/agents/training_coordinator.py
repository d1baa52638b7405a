import logging
import time
from pathlib import Path
from typing import Any, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np

from agents.base_agent import BaseAgent
from agents.drl_agent import GuidedController, PolicyController
from agents.ilqr_agent import ILQRController
from models.data_models import (
    Experience, ILQRConfig, RoundRecord, TrainingConfig, TrialResult, UpdateStats,
)
from services.checkpoint import replay_path, save_checkpoint
from services.environment import EnvSpec, run_trial
from services.policy_gradient import update
from services.policy_network import PolicyWeights
from services.replay_buffer import Batch, ReplayBuffer, make_batch
from services.rewards import RewardTerms, assign_rewards, episode_reward
from utils.helpers import format_time_duration

PathLike = Union[str, Path]


class TrainingResult(NamedTuple):
    weights: PolicyWeights
    curve: List[RoundRecord]
    buffer: ReplayBuffer


class TrainingCoordinator(BaseAgent):
    """Runs the training loop: rollout -> episode reward -> replay batch -> policy-gradient step.

    Round r draws all of its randomness from default_rng([seed, r]); together
    with the saved weights and replay buffer this makes a resumed run continue
    the learning curve exactly.
    """

    def __init__(self, env: EnvSpec, cfg: TrainingConfig, weights: PolicyWeights,
                 ilqr_cfg: Optional[ILQRConfig] = None, rho: float = 0.1,
                 buffer: Optional[ReplayBuffer] = None, start_round: int = 0,
                 checkpoint_path: Optional[PathLike] = None):
        super().__init__("trainer")
        self.env = env.model_copy(update={"step_cap": cfg.episode_cap})
        self.cfg = cfg
        self.weights = weights
        self.ilqr_cfg = ilqr_cfg or ILQRConfig()
        self.rho = rho
        self.buffer = buffer if buffer is not None else ReplayBuffer(cfg.replay_capacity)
        self.round = start_round
        self.checkpoint_path = checkpoint_path
        self.curve: List[RoundRecord] = []

    def is_guided(self, round_index: int) -> bool:
        interval = self.cfg.guided_interval
        return interval > 0 and (round_index + 1) % interval == 0

    def run_training(self, rounds: Optional[int] = None) -> TrainingResult:
        """Run rounds [self.round, target); `rounds` defaults to the configured total"""
        target = self.cfg.rounds if rounds is None else self.round + rounds
        started = time.monotonic()
        self.log(f"training rounds {self.round}..{target - 1} on {self.env.area}")
        while self.round < target:
            record = self.run_round(self.round)
            self.curve.append(record)
            self.round += 1
            if self.cfg.log_every and self.round % self.cfg.log_every == 0:
                window = self.curve[-self.cfg.log_every:]
                rate = sum(r.success for r in window) / len(window)
                mean_reward = float(np.mean([r.reward for r in window]))
                self.log(f"round {self.round}: success {rate:.2f}, mean reward {mean_reward:.4f}")
            if self.cfg.checkpoint_every and self.round % self.cfg.checkpoint_every == 0:
                self.save(self.checkpoint_path)
        self.log(f"finished {len(self.curve)} rounds in {format_time_duration(time.monotonic() - started)}")
        return TrainingResult(self.weights, list(self.curve), self.buffer)

    def run_round(self, round_index: int) -> RoundRecord:
        rng = np.random.default_rng([self.cfg.seed, round_index])
        guided = self.is_guided(round_index)

        # Phase 1: rollout
        trial, controller = self.phase1_rollout(rng, guided)

        # Phase 2: rewards
        experiences, terms = self.phase2_rewards(trial, controller)

        # Phase 3: replay
        batch = self.phase3_replay(experiences, rng)

        # Phase 4: update
        stats = self.phase4_update(batch, rng)

        return RoundRecord(round=round_index, reward=terms.reward, success=trial.success,
                           loss=stats.loss, steps=trial.ticks, guided=guided)

    def phase1_rollout(self, rng: np.random.Generator, guided: bool) -> Tuple[TrialResult, PolicyController]:
        if guided:
            guide = ILQRController(self.ilqr_cfg, self.rho)
            controller = GuidedController(self.weights, guide, self.cfg.guided_q, self.cfg.importance_cap)
        else:
            controller = PolicyController(self.weights, greedy=False, record=True)
        trial = run_trial(self.env, controller, rng, seed=self.cfg.seed)
        return trial, controller

    def phase2_rewards(self, trial: TrialResult,
                       controller: PolicyController) -> Tuple[List[Experience], RewardTerms]:
        steps = controller.transcript
        terms = episode_reward(trial.path.positions, [s.prob for s in steps], trial.goal,
                               trial.success, self.cfg.alpha, self.cfg.r_max)
        experiences = assign_rewards([s.obs for s in steps], [s.action for s in steps], terms.reward,
                                     self.cfg.gamma, [s.importance_weight for s in steps],
                                     [s.prob for s in steps])
        return experiences, terms

    def phase3_replay(self, experiences: List[Experience], rng: np.random.Generator) -> Batch:
        # pad from earlier episodes only, then store this one
        batch = make_batch(self.buffer, experiences, self.cfg.batch_size, rng)
        self.buffer.push(experiences)
        return batch

    def phase4_update(self, batch: Batch, rng: np.random.Generator) -> UpdateStats:
        if not batch.experiences:
            return UpdateStats(loss=0.0, grad_norm=0.0, batch_size=0, skipped=True)
        self.weights, stats = update(self.weights, batch.experiences, self.cfg.learning_rate, rng,
                                     self.cfg.importance_cap)
        if stats.skipped:
            self.log(f"round {self.round}: update skipped (non-finite gradient)", logging.WARNING)
        return stats

    def training_state(self) -> Dict[str, Any]:
        return {"round": self.round, "seed": self.cfg.seed, "training": self.cfg.model_dump(mode="json")}

    def save(self, path: Optional[PathLike]) -> None:
        if path is None:
            return
        save_checkpoint(path, self.weights, self.training_state())
        self.buffer.save(replay_path(path))


def run_training(env: EnvSpec, cfg: TrainingConfig, weights: PolicyWeights,
                 ilqr_cfg: Optional[ILQRConfig] = None, rho: float = 0.1) -> TrainingResult:
    return TrainingCoordinator(env, cfg, weights, ilqr_cfg, rho).run_training()
