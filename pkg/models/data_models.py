import math
from enum import Enum
from typing import List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from utils.helpers import wrap_angle


class PatternKind(str, Enum):
    VORTEX = "vortex"
    MEANDER = "meander"
    SPIN = "spin"
    CENTRIPETAL = "centripetal"
    UNIFORM = "uniform"


class Method(str, Enum):
    DRL = "drl"
    ILQR = "ilqr"


class Outcome(str, Enum):
    SUCCESS = "success"
    COLLISION = "collision"
    TIMEOUT = "timeout"


class ArrayModel(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# --- field -----------------------------------------------------------------

class FieldPatternSpec(BaseModel):
    """Analytic disturbance pattern; centre moves on center -> center_end -> center"""
    model_config = ConfigDict(frozen=True)

    kind: PatternKind
    strength: float = 0.5
    scale: float = 8.0
    amplitude: float = 1.0  # meander cross-flow ratio
    direction: float = 0.0  # uniform flow heading (rad)
    center: Optional[Tuple[float, float]] = None  # world units, None = grid centre
    center_end: Optional[Tuple[float, float]] = None
    period: float = 60.0
    noise: float = 0.0  # std of per-cell Gaussian perturbation, as a fraction of strength
    seed: int = 0  # seeds the perturbation

    @field_validator("strength", "noise")
    @classmethod
    def _non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("must be >= 0")
        return value

    @field_validator("scale", "period")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @property
    def is_static(self) -> bool:
        return self.center_end is None or tuple(self.center_end) == tuple(self.center or ())


class CurrentCsvSchema(BaseModel):
    model_config = ConfigDict(frozen=True)

    time_column: str = "t_sec"
    x_index_column: str = "ix"
    y_index_column: str = "iy"
    east_column: str = "u_east"
    north_column: str = "v_north"
    cell_size: float = 1.0
    strength_cap: float = 1.0

    @property
    def columns(self) -> List[str]:
        return [self.time_column, self.x_index_column, self.y_index_column,
                self.east_column, self.north_column]


class FieldJacobian(BaseModel):
    model_config = ConfigDict(frozen=True)

    dwx_dx: float
    dwx_dy: float
    dwy_dx: float
    dwy_dy: float

    @model_validator(mode="after")
    def _finite(self) -> "FieldJacobian":
        if not all(math.isfinite(v) for v in (self.dwx_dx, self.dwx_dy, self.dwy_dx, self.dwy_dy)):
            raise ValueError("field jacobian entries must be finite")
        return self


# --- dynamics --------------------------------------------------------------

class VehicleState(BaseModel):
    model_config = ConfigDict(frozen=True)

    x: float
    y: float
    theta: float = 0.0

    @field_validator("theta")
    @classmethod
    def _wrap(cls, value: float) -> float:
        return wrap_angle(value)

    @model_validator(mode="after")
    def _finite(self) -> "VehicleState":
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("vehicle position must be finite")
        return self

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)

    @classmethod
    def from_array(cls, s: np.ndarray) -> "VehicleState":
        return cls(x=float(s[0]), y=float(s[1]), theta=float(s[2]))

    @property
    def position(self) -> Tuple[float, float]:
        return (self.x, self.y)


class ControlInput(BaseModel):
    model_config = ConfigDict(frozen=True)

    u: float  # angular rate, rad/s


class MotionParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    v: float = 1.0
    dt: float = 1.0
    u_max: float = math.pi / 4

    @field_validator("v", "dt", "u_max")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @model_validator(mode="after")
    def _linearization_valid(self) -> "MotionParams":
        # the iLQR linearisation ignores the heading wrap
        if self.u_max * self.dt > math.pi / 2 + 1e-12:
            raise ValueError("u_max * dt must not exceed pi/2")
        return self


class DynamicsJacobians(ArrayModel):
    A: np.ndarray  # 3x3, df/ds
    B: np.ndarray  # 3x1, df/du


class Trajectory(ArrayModel):
    states: np.ndarray  # (N+1, 3)
    controls: np.ndarray  # (N,)
    times: np.ndarray  # (N+1,)

    @property
    def positions(self) -> np.ndarray:
        return self.states[:, :2]

    def __len__(self) -> int:
        return len(self.states)


# --- ilqr ------------------------------------------------------------------

def _position_weight() -> np.ndarray:
    return np.diag([1.0, 1.0, 0.0])


class QuadraticCost(ArrayModel):
    goal: np.ndarray  # s_f = (x_f, y_f, theta_f)
    W_p: np.ndarray = Field(default_factory=_position_weight)
    W_f: np.ndarray = Field(default_factory=_position_weight)
    rho: float = 0.1

    @model_validator(mode="after")
    def _check(self) -> "QuadraticCost":
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        for name in ("W_p", "W_f"):
            w = np.asarray(getattr(self, name), dtype=float)
            if w.shape != (3, 3) or not np.allclose(w, w.T):
                raise ValueError(f"{name} must be a symmetric 3x3 matrix")
            if np.linalg.eigvalsh(w).min() < -1e-12:
                raise ValueError(f"{name} must be positive semidefinite")
        return self


class ILQRConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    horizon: int = 40
    max_iters: int = 50
    cost_tol: float = 1e-4
    mu_init: float = 0.0
    mu_factor: float = 10.0
    mu_decrease: float = 2.0
    mu_min: float = 1e-6
    mu_max: float = 1e10
    linesearch_alphas: Tuple[float, ...] = (1.0, 0.5, 0.25, 0.1, 0.05)
    replan_every: int = 5
    heading_gain: float = 1.0  # warm-start point-at-goal controller
    collision_restarts: bool = True  # re-solve from other initial sequences when a plan hits an obstacle

    @field_validator("horizon", "max_iters", "replan_every")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("cost_tol")
    @classmethod
    def _tol_positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("cost_tol must be > 0")
        return value

    @field_validator("mu_init")
    @classmethod
    def _mu_non_negative(cls, value: float) -> float:
        if value < 0:
            raise ValueError("mu_init must be >= 0")
        return value


class ILQRSolution(ArrayModel):
    states: Trajectory
    controls: np.ndarray  # (N,)
    K: np.ndarray  # (N, 3) feedback gains
    k: np.ndarray  # (N,) feedforward terms
    total_cost: float
    iterations: int
    converged: bool
    cost_history: List[float] = Field(default_factory=list)
    reduction_ratios: List[float] = Field(default_factory=list)  # actual / predicted, full steps
    mu: float = 0.0  # regularisation of the backward pass that produced K and k


# --- policy ----------------------------------------------------------------

class NetworkConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    grid_size: int = 48
    channels: Tuple[int, int, int] = (8, 16, 16)
    vehicle_widths: Tuple[int, int] = (16, 16)
    fc_widths: Tuple[int, int] = (128, 64)
    n_actions: int = 9
    dropout: float = 0.5
    kernel: int = 3
    init_seed: int = 0

    @field_validator("grid_size")
    @classmethod
    def _poolable(cls, value: int) -> int:
        if value < 8 or value % 8:
            raise ValueError("grid_size must be a positive multiple of 8 (three 2x2 pools)")
        return value

    @field_validator("n_actions")
    @classmethod
    def _actions(cls, value: int) -> int:
        if value < 2:
            raise ValueError("n_actions must be >= 2")
        return value

    @field_validator("dropout")
    @classmethod
    def _dropout(cls, value: float) -> float:
        if not 0.0 <= value < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return value

    @field_validator("kernel")
    @classmethod
    def _odd_kernel(cls, value: int) -> int:
        if value < 1 or value % 2 == 0:
            raise ValueError("kernel must be odd")
        return value

    @classmethod
    def tiny(cls, **overrides) -> "NetworkConfig":
        params = dict(grid_size=8, channels=(2, 2, 2), vehicle_widths=(8, 8), fc_widths=(16, 8))
        params.update(overrides)
        return cls(**params)


class Observation(ArrayModel):
    env: np.ndarray  # (3 slices, 3 channels, H, W), oldest slice first
    vehicle: np.ndarray  # (5,)


class ActionDistribution(ArrayModel):
    probs: np.ndarray
    logits: np.ndarray


# --- training --------------------------------------------------------------

class Experience(ArrayModel):
    obs: Observation
    action: int
    reward: float  # Q-hat weight used by the update
    step_index: int
    episode_length: int
    importance_weight: float = 1.0
    policy_prob: Optional[float] = None  # pi(action | obs) when recorded
    tag: int = 0  # insertion sequence number, set by the replay buffer

    @model_validator(mode="after")
    def _finite(self) -> "Experience":
        if not math.isfinite(self.reward):
            raise ValueError("reward must be finite")
        if self.action < 0:
            raise ValueError("action must be a valid index")
        if self.policy_prob is not None and not 0.0 <= self.policy_prob <= 1.0:
            raise ValueError("policy_prob must be a probability")
        return self


class TrainingConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    learning_rate: float = 1e-6
    batch_size: int = 500
    episode_cap: int = 300
    alpha: float = 0.9
    gamma: float = 0.99
    rounds: int = 0
    guided_fraction: float = 0.1
    replay_capacity: int = 10000
    r_max: float = 10.0
    guided_q: float = 0.9
    importance_cap: float = 5.0
    seed: int = 0
    checkpoint_every: int = 0
    log_every: int = 50

    @field_validator("learning_rate", "r_max", "importance_cap")
    @classmethod
    def _positive(cls, value: float) -> float:
        if not value > 0:
            raise ValueError("must be > 0")
        return value

    @field_validator("batch_size", "episode_cap", "replay_capacity")
    @classmethod
    def _at_least_one(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("alpha", "guided_fraction")
    @classmethod
    def _unit_interval(cls, value: float) -> float:
        if not 0.0 <= value <= 1.0:
            raise ValueError("must be in [0, 1]")
        return value

    @field_validator("gamma", "guided_q")
    @classmethod
    def _open_unit_interval(cls, value: float) -> float:
        if not 0.0 < value <= 1.0:
            raise ValueError("must be in (0, 1]")
        return value

    @field_validator("rounds")
    @classmethod
    def _rounds(cls, value: int) -> int:
        if value < 0:
            raise ValueError("rounds must be >= 0")
        return value

    @property
    def guided_interval(self) -> int:
        if self.guided_fraction <= 0:
            return 0
        return max(1, round(1.0 / self.guided_fraction))


class UpdateStats(BaseModel):
    loss: float
    grad_norm: float
    batch_size: int
    skipped: bool = False


class RoundRecord(BaseModel):
    round: int
    reward: float
    success: bool
    loss: float
    steps: int
    guided: bool = False


# --- episode ---------------------------------------------------------------

class TrialResult(ArrayModel):
    trial: int
    method: Method
    success: bool
    outcome: Outcome
    time_cost: float
    step_cost: int
    ticks: int
    path: Trajectory
    start: VehicleState
    goal: Tuple[float, float]
    seed: int = 0
    area: str = "area1"


class BatchSummary(BaseModel):
    method: Method
    area: str
    trials: int
    successes: int
    success_rate: float
    avg_time_cost: float
    std_time_cost: float
    avg_step_cost: float
    std_step_cost: float
