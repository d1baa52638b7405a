import math

import numpy as np
import pytest

from models.data_models import FieldPatternSpec, MotionParams, NetworkConfig, Observation, PatternKind
from services.disturbance_field import DisturbanceField, generate


def uniform_field(size: int = 16, flow=(0.0, 0.0), frames: int = 1, cap: float = 1.0) -> DisturbanceField:
    u = np.full((frames, size, size), float(flow[0]))
    v = np.full((frames, size, size), float(flow[1]))
    return DisturbanceField(np.arange(frames, dtype=float) * 10.0, u, v, strength_cap=cap)


def pattern_field(kind: PatternKind, size: int = 16, frames: int = 1, **spec) -> DisturbanceField:
    cap = spec.pop("strength_cap", 1.0)
    return generate(FieldPatternSpec(kind=kind, **spec), size, size, frames, 10.0, strength_cap=cap)


def random_observation(config: NetworkConfig, rng: np.random.Generator) -> Observation:
    g = config.grid_size
    return Observation(env=rng.normal(size=(3, 3, g, g)), vehicle=rng.normal(size=5))


@pytest.fixture
def motion() -> MotionParams:
    return MotionParams(v=1.0, dt=1.0, u_max=math.pi / 4)


@pytest.fixture
def zero_field() -> DisturbanceField:
    return uniform_field(16)


@pytest.fixture
def tiny_config() -> NetworkConfig:
    return NetworkConfig.tiny()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
