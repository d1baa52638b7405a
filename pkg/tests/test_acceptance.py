"""Desk-scale experiments. Deselected by default; run with `pytest -m slow`."""
import numpy as np
import pytest

from agents.drl_agent import PolicyController
from agents.ilqr_agent import ILQRController
from agents.training_coordinator import run_training
from models.data_models import ILQRConfig, NetworkConfig, PatternKind, TrainingConfig
from services.environment import EnvSpec, run_batch
from services.policy_network import PolicyWeights
from tests.conftest import pattern_field, uniform_field

pytestmark = pytest.mark.slow

# failures are scored mostly by how close they came, blame concentrates on the last steps
DESK_TRAINING = dict(learning_rate=1e-2, batch_size=64, alpha=0.2, gamma=0.9, guided_fraction=0.2, log_every=500)


def test_tiny_policy_learns_a_calm_field():
    env = EnvSpec(field=uniform_field(8), min_separation=3.0)
    cfg = TrainingConfig(rounds=2000, episode_cap=30, seed=3, **DESK_TRAINING)
    result = run_training(env, cfg, PolicyWeights.init(NetworkConfig.tiny(dropout=0.0), seed=3),
                          ILQRConfig(horizon=15))
    tail = result.curve[-100:]
    assert sum(r.success for r in tail) / len(tail) >= 0.9


@pytest.mark.parametrize("kind", [PatternKind.MEANDER, PatternKind.SPIN])
def test_ilqr_solves_desk_fields(kind):
    env = EnvSpec(field=pattern_field(kind, size=24, strength=0.5, scale=8.0))
    batch = run_batch(env, lambda: ILQRController(ILQRConfig()), 50, seed=11, workers=4)
    assert batch.success_rate >= 0.9


def test_trained_policy_handles_a_spin_field():
    env = EnvSpec(field=pattern_field(PatternKind.SPIN, size=16, strength=0.5, scale=8.0))
    network = NetworkConfig(grid_size=16, channels=(4, 8, 8), vehicle_widths=(16, 16), fc_widths=(64, 32),
                            dropout=0.0)
    cfg = TrainingConfig(rounds=5000, episode_cap=100, seed=7, **DESK_TRAINING)
    trained = run_training(env, cfg, PolicyWeights.init(network, seed=7), ILQRConfig(horizon=20)).weights
    held_out = run_batch(env, lambda: PolicyController(trained, greedy=True), 50, seed=10_007, workers=4)
    assert held_out.success_rate >= 0.8
    assert np.isfinite(held_out.summary.avg_time_cost)
