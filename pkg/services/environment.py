"""Episode harness: placement, termination rules and per-trial metrics."""
import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, NamedTuple, Optional, Protocol, Sequence, Tuple, Union

import numpy as np
from pydantic import Field, model_validator

from config import config
from models.data_models import (
    ArrayModel, BatchSummary, ControlInput, Method, MotionParams, Outcome, Trajectory, TrialResult,
    VehicleState,
)
from models.exceptions import ConfigurationError
from services.disturbance_field import DisturbanceField
from services.dynamics import FieldDynamics
from utils.helpers import calculate_distance, cell_index, count_cell_transitions

logger = logging.getLogger(__name__)

Point = Tuple[float, float]


class EnvSpec(ArrayModel):
    field: DisturbanceField
    border_obstacles: bool = True
    start: Optional[Tuple[float, ...]] = None  # (x, y) or (x, y, theta); None = random
    goal: Optional[Point] = None  # None = random
    min_separation: float = 5.0
    motion: MotionParams = Field(default_factory=MotionParams)
    step_cap: int = config.STEP_CAP
    success_radius: float = config.SUCCESS_RADIUS
    time_scale: float = 1.0
    area: str = "area1"

    @model_validator(mode="after")
    def _check(self) -> "EnvSpec":
        if not self.min_separation > 0:
            raise ConfigurationError("min_separation must be > 0")
        if self.step_cap < 1:
            raise ConfigurationError("step_cap must be >= 1")
        if self.start is not None and len(self.start) not in (2, 3):
            raise ConfigurationError("start must be x,y or x,y,theta")
        obstacles = self.obstacle_map()
        for name, point in (("start", self.start), ("goal", self.goal)):
            if point is not None and not self.cell_is_free(obstacles, point[0], point[1]):
                raise ConfigurationError(f"{name} {tuple(point)} is outside the grid or on an obstacle")
        if self.start is not None and self.goal is not None and \
                calculate_distance(self.start, self.goal) == 0.0:
            raise ConfigurationError("start and goal coincide")
        return self

    def obstacle_map(self) -> np.ndarray:
        occupied = np.zeros((self.field.grid_h, self.field.grid_w), dtype=bool)
        if self.border_obstacles:
            occupied[0, :] = occupied[-1, :] = True
            occupied[:, 0] = occupied[:, -1] = True
        return occupied

    def cell_is_free(self, obstacles: np.ndarray, x: float, y: float) -> bool:
        ix, iy = cell_index(x, y, self.field.cell_size)
        if not (0 <= ix < self.field.grid_w and 0 <= iy < self.field.grid_h):
            return False
        return not obstacles[iy, ix]

    def is_free(self, x: float, y: float) -> bool:
        return self.cell_is_free(self.obstacle_map(), x, y)

    def dynamics(self) -> FieldDynamics:
        return FieldDynamics(self.field, self.motion, time_scale=self.time_scale)

    def place(self, rng: np.random.Generator) -> Tuple[VehicleState, Point]:
        """Start state and goal; random ends sit on free cell centres at least min_separation apart"""
        cs = self.field.cell_size
        free = np.argwhere(~self.obstacle_map())  # rows of (iy, ix)
        if len(free) < 2:
            raise ConfigurationError("fewer than two free cells to place start and goal")
        for _ in range(config.PLACEMENT_ATTEMPTS):
            if self.start is None:
                iy, ix = free[rng.integers(len(free))]
                start_xy = (float(ix * cs), float(iy * cs))
            else:
                start_xy = (float(self.start[0]), float(self.start[1]))
            if self.goal is None:
                iy, ix = free[rng.integers(len(free))]
                goal = (float(ix * cs), float(iy * cs))
            else:
                goal = (float(self.goal[0]), float(self.goal[1]))
            separation = calculate_distance(start_xy, goal)
            fixed = self.start is not None and self.goal is not None
            if separation >= self.min_separation or (fixed and separation > 0):
                break
        else:
            raise ConfigurationError(
                f"no start/goal pair {self.min_separation} apart after {config.PLACEMENT_ATTEMPTS} draws")
        theta = float(rng.uniform(-math.pi, math.pi))
        if self.start is not None and len(self.start) == 3:
            theta = float(self.start[2])
        return VehicleState(x=start_xy[0], y=start_xy[1], theta=theta), goal


class Controller(Protocol):
    method: Method

    def reset(self, env: EnvSpec, start: VehicleState, goal: Point, rng: np.random.Generator) -> None: ...

    def act(self, state: VehicleState, t: float) -> Union[ControlInput, float]: ...


def _control_value(u: Union[ControlInput, float]) -> float:
    return float(u.u) if isinstance(u, ControlInput) else float(u)


def run_trial(env: EnvSpec, controller: Controller, rng: np.random.Generator,
              placement: Optional[Tuple[VehicleState, Point]] = None, trial: int = 0,
              seed: int = 0) -> TrialResult:
    start, goal = placement if placement is not None else env.place(rng)
    controller.reset(env, start, goal, rng)
    dynamics = env.dynamics()
    obstacles = env.obstacle_map()
    dt, u_max = env.motion.dt, env.motion.u_max

    states = [start.as_array()]
    controls: List[float] = []
    outcome = Outcome.SUCCESS if calculate_distance(start.position, goal) < env.success_radius else None
    while outcome is None:
        if len(controls) >= env.step_cap:
            outcome = Outcome.TIMEOUT
            break
        t = len(controls) * dt
        u = min(max(_control_value(controller.act(VehicleState.from_array(states[-1]), t)), -u_max), u_max)
        s_next = dynamics.step_array(states[-1], u, t)
        controls.append(u)
        states.append(s_next)
        if calculate_distance(s_next[:2], goal) < env.success_radius:
            outcome = Outcome.SUCCESS
        elif not env.cell_is_free(obstacles, s_next[0], s_next[1]):
            outcome = Outcome.COLLISION

    states_arr = np.array(states)
    ticks = len(controls)
    path = _trajectory(states_arr, controls, dt)
    return TrialResult(
        trial=trial, method=controller.method, success=outcome == Outcome.SUCCESS, outcome=outcome,
        time_cost=ticks * dt, step_cost=count_cell_transitions(states_arr[:, :2], env.field.cell_size),
        ticks=ticks, path=path, start=start, goal=goal, seed=seed, area=env.area,
    )


def _trajectory(states: np.ndarray, controls: Sequence[float], dt: float) -> Trajectory:
    return Trajectory(states=states, controls=np.asarray(controls, dtype=float),
                      times=np.arange(len(states)) * dt)


# --- batches -----------------------------------------------------------------

ControllerFactory = Callable[[], Controller]


def trial_streams(seed: int, trial: int) -> Tuple[np.random.Generator, np.random.Generator]:
    """Placement and controller generators of one trial; placements are shared across methods"""
    return np.random.default_rng([seed, trial, 0]), np.random.default_rng([seed, trial, 1])


def _trial_job(env: EnvSpec, factory: ControllerFactory, trial: int, seed: int) -> TrialResult:
    placement_rng, controller_rng = trial_streams(seed, trial)
    placement = env.place(placement_rng)
    return run_trial(env, factory(), controller_rng, placement=placement, trial=trial, seed=seed)


async def run_batch_async(env: EnvSpec, factory: ControllerFactory, n_trials: int, seed: int = 0,
                          workers: int = 1) -> List[TrialResult]:
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        tasks = [loop.run_in_executor(pool, _trial_job, env, factory, trial, seed)
                 for trial in range(n_trials)]
        return list(await asyncio.gather(*tasks))


class BatchResult(NamedTuple):
    summary: BatchSummary
    trials: List[TrialResult]

    @property
    def success_rate(self) -> float:
        return self.summary.success_rate


def run_batch(env: EnvSpec, factory: ControllerFactory, n_trials: int, seed: int = 0,
              workers: int = 1, include_failures: bool = False) -> BatchResult:
    if n_trials < 1:
        raise ConfigurationError("n_trials must be >= 1")
    trials = asyncio.run(run_batch_async(env, factory, n_trials, seed, workers))
    method = trials[0].method
    summary = summarize(trials, method, env.area, include_failures)
    logger.info("%s on %s: %d/%d successes", method.value, env.area, summary.successes, n_trials)
    return BatchResult(summary, trials)


def summarize(trials: Sequence[TrialResult], method: Method, area: str,
              include_failures: bool = False) -> BatchSummary:
    """Success rate plus mean / population std of the costs (successful trials only by default)"""
    successes = sum(1 for trial in trials if trial.success)
    pool = [trial for trial in trials if include_failures or trial.success]
    times = np.array([trial.time_cost for trial in pool], dtype=float)
    steps = np.array([trial.step_cost for trial in pool], dtype=float)

    def stats(values: np.ndarray) -> Tuple[float, float]:
        if values.size == 0:
            return math.nan, math.nan
        return float(values.mean()), float(values.std())

    avg_time, std_time = stats(times)
    avg_step, std_step = stats(steps)
    return BatchSummary(
        method=method, area=area, trials=len(trials), successes=successes,
        success_rate=successes / len(trials) if trials else 0.0,
        avg_time_cost=avg_time, std_time_cost=std_time, avg_step_cost=avg_step, std_step_cost=std_step,
    )
