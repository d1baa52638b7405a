import logging
import math
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from models.data_models import (
    FieldPatternSpec, ILQRConfig, MotionParams, NetworkConfig, PatternKind, TrainingConfig,
)
from models.exceptions import ConfigurationError


class Config:
    ENV_PREFIX = "DRIFTPLAN_"

    # Episode rules
    SUCCESS_RADIUS = 1.0  # cells
    STEP_CAP = 300
    PLACEMENT_ATTEMPTS = 1000

    # Reward / guided sampling
    R_MAX = 10.0
    GUIDED_Q = 0.9
    IMPORTANCE_CAP = 5.0

    # Receding horizon iLQR
    REPLAN_EVERY = 5
    HORIZON = 40

    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

config = Config()


class EnvironmentSettings(BaseModel):
    """DRIFTPLAN_SEED, DRIFTPLAN_WORKERS and DRIFTPLAN_LOG_LEVEL, read when a run is configured"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    seed: int = 0
    workers: int = 1
    log_level: str = "INFO"

    @field_validator("workers")
    @classmethod
    def _workers_positive(cls, value: int) -> int:
        if value < 1:
            raise ValueError("must be >= 1")
        return value

    @field_validator("log_level")
    @classmethod
    def _known_level(cls, value: str) -> str:
        value = value.strip().upper()
        if not isinstance(logging.getLevelName(value), int):
            raise ValueError(f"unknown log level {value!r}")
        return value


def environment_settings(environ: Optional[Mapping[str, str]] = None) -> EnvironmentSettings:
    environ = os.environ if environ is None else environ
    raw = {name: environ[config.ENV_PREFIX + name.upper()] for name in EnvironmentSettings.model_fields
           if config.ENV_PREFIX + name.upper() in environ}
    try:
        return EnvironmentSettings(**raw)
    except ValidationError as exc:
        names = ", ".join(config.ENV_PREFIX + str(error["loc"][0]).upper() for error in exc.errors())
        raise ConfigurationError(f"invalid environment variable(s) {names}: {exc}") from exc


def setup_logging(level: Optional[str] = None) -> None:
    """Configure the root logger; DRIFTPLAN_LOG_LEVEL applies when no level is given"""
    level = level or environment_settings().log_level
    logging.basicConfig(level=level.upper(), format=config.LOG_FORMAT)


def _parse_int_tuple(value: Any) -> Any:
    if isinstance(value, str):
        return tuple(int(part) for part in value.replace(" ", "").split(",") if part)
    return value


def _parse_point(value: Any) -> Any:
    if isinstance(value, str):
        text = value.strip().lower()
        if text in ("", "none", "random"):
            return None
        return tuple(float(part) for part in text.split(","))
    return value


class RunConfig(BaseModel):
    """Flat key=value run configuration; every key has a default"""
    model_config = ConfigDict(extra="forbid", frozen=True)

    # field
    grid_size: int = 48
    cell_size: float = 1.0
    kind: PatternKind = PatternKind.VORTEX
    strength: float = 0.5
    scale: float = 8.0
    amplitude: float = 1.0
    direction: float = 0.0
    center: Optional[Tuple[float, float]] = None
    center_end: Optional[Tuple[float, float]] = None
    period: float = 60.0
    noise: float = 0.0
    n_frames: int = 8
    dt_frame: float = 10.0
    strength_cap: Optional[float] = None  # None -> vehicle speed v
    time_scale: float = 1.0

    # motion
    v: float = 1.0
    dt: float = 1.0
    u_max: float = math.pi / 4

    # episode
    border_obstacles: bool = True
    start: Optional[Tuple[float, ...]] = None  # x,y or x,y,theta; None = random
    goal: Optional[Tuple[float, float]] = None
    min_separation: float = 5.0
    step_cap: int = config.STEP_CAP
    success_radius: float = config.SUCCESS_RADIUS
    include_failures: bool = False

    # ilqr
    horizon: int = config.HORIZON
    replan_every: int = config.REPLAN_EVERY
    max_iters: int = 50
    cost_tol: float = 1e-4
    mu_init: float = 0.0
    mu_factor: float = 10.0
    rho: float = 0.1

    # policy network
    channels: Tuple[int, int, int] = (8, 16, 16)
    vehicle_widths: Tuple[int, int] = (16, 16)
    fc_widths: Tuple[int, int] = (128, 64)
    n_actions: int = 9
    dropout: float = 0.5

    # training
    learning_rate: float = 1e-6
    batch_size: int = 500
    replay_capacity: int = 10000
    alpha: float = 0.9
    gamma: float = 0.99
    guided_fraction: float = 0.1
    r_max: float = config.R_MAX
    rounds: int = 0
    checkpoint_every: int = 0
    log_every: int = 50

    # run
    seed: int = 0  # DRIFTPLAN_SEED when not set
    workers: int = 1  # DRIFTPLAN_WORKERS when not set
    trials: int = 50

    @field_validator("channels", "vehicle_widths", "fc_widths", mode="before")
    @classmethod
    def _int_tuples(cls, value: Any) -> Any:
        return _parse_int_tuple(value)

    @field_validator("center", "center_end", "start", "goal", mode="before")
    @classmethod
    def _points(cls, value: Any) -> Any:
        return _parse_point(value)

    @field_validator("strength_cap", mode="before")
    @classmethod
    def _optional_cap(cls, value: Any) -> Any:
        if isinstance(value, str) and value.strip().lower() in ("", "none"):
            return None
        return value

    # projections onto the library configs

    def pattern_spec(self) -> FieldPatternSpec:
        return FieldPatternSpec(
            kind=self.kind, strength=self.strength, scale=self.scale, amplitude=self.amplitude,
            direction=self.direction, center=self.center, center_end=self.center_end,
            period=self.period, noise=self.noise, seed=self.seed,
        )

    def motion(self) -> MotionParams:
        return MotionParams(v=self.v, dt=self.dt, u_max=self.u_max)

    def ilqr(self) -> ILQRConfig:
        return ILQRConfig(
            horizon=self.horizon, max_iters=self.max_iters, cost_tol=self.cost_tol,
            mu_init=self.mu_init, mu_factor=self.mu_factor, replan_every=self.replan_every,
        )

    def network(self) -> NetworkConfig:
        return NetworkConfig(
            grid_size=self.grid_size, channels=self.channels, vehicle_widths=self.vehicle_widths,
            fc_widths=self.fc_widths, n_actions=self.n_actions, dropout=self.dropout,
            init_seed=self.seed,
        )

    def training(self) -> TrainingConfig:
        return TrainingConfig(
            learning_rate=self.learning_rate, batch_size=self.batch_size,
            episode_cap=self.step_cap, alpha=self.alpha, gamma=self.gamma, rounds=self.rounds,
            guided_fraction=self.guided_fraction, replay_capacity=self.replay_capacity,
            r_max=self.r_max, seed=self.seed, checkpoint_every=self.checkpoint_every,
            log_every=self.log_every,
        )

    def effective_strength_cap(self) -> float:
        return self.v if self.strength_cap is None else float(self.strength_cap)

    def with_overrides(self, overrides: Dict[str, Any]) -> "RunConfig":
        return build_run_config({**self.model_dump(), **overrides})


def build_run_config(values: Dict[str, Any]) -> RunConfig:
    unknown = sorted(set(values) - set(RunConfig.model_fields))
    if unknown:
        raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")
    if "seed" not in values or "workers" not in values:
        env = environment_settings()
        values = {"seed": env.seed, "workers": env.workers, **values}
    try:
        return RunConfig(**values)
    except ValidationError as exc:
        raise ConfigurationError(str(exc)) from exc


def parse_config_text(text: str) -> Dict[str, str]:
    values: Dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"config line {number}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigurationError(f"config line {number}: empty key")
        values[key] = value
    return values


def load_run_config(path: Optional[Path] = None, overrides: Optional[Dict[str, Any]] = None) -> RunConfig:
    """defaults < config file < overrides"""
    values: Dict[str, Any] = {}
    if path is not None:
        try:
            values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file {path}: {exc}") from exc
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return build_run_config(values)
