import logging
import math
from typing import Iterator, List, Optional, Tuple

import numpy as np

from agents.base_agent import BaseController
from models.data_models import ControlInput, ILQRConfig, ILQRSolution, Method, QuadraticCost, VehicleState
from models.exceptions import SolverDivergenceError
from services.dynamics import FieldDynamics, rollout_array
from services.ilqr import heading_controls, solve
from utils.helpers import wrap_angle

# constant turn rates tried as extra initial sequences, as fractions of u_max
RESTART_TURNS = (0.0, 0.5, -0.5, 1.0, -1.0)


class ILQRController(BaseController):
    """Receding-horizon iLQR: solve over `horizon` steps, execute `replan_every`, re-solve.

    Between re-plans the executed control is u_j + K_j (s - s_j) around the
    current plan. The previous plan's unused tail warm-starts the next solve.
    The cost knows nothing about obstacles, so a plan whose predicted path
    enters an obstacle cell before reaching the goal is re-solved from other
    initial sequences and the best collision-free result wins.
    """
    method = Method.ILQR

    def __init__(self, cfg: Optional[ILQRConfig] = None, rho: float = 0.1):
        super().__init__("ilqr")
        self.cfg = cfg or ILQRConfig()
        self.rho = rho
        self.env = None
        self.dynamics: Optional[FieldDynamics] = None
        self.cost: Optional[QuadraticCost] = None
        self.obstacles: Optional[np.ndarray] = None
        self.plan: Optional[ILQRSolution] = None
        self._plan_step = 0
        self.solves = 0
        self.restarts = 0

    def reset(self, env, start: VehicleState, goal: Tuple[float, float],
              rng: np.random.Generator) -> None:
        self.env = env
        self.dynamics = env.dynamics()
        self.cost = QuadraticCost(goal=np.array([goal[0], goal[1], 0.0]), rho=self.rho)
        self.obstacles = env.obstacle_map()
        self.plan = None
        self._plan_step = 0
        self.solves = 0
        self.restarts = 0

    def _warm_start(self, s: np.ndarray, t: float) -> np.ndarray:
        n = self.cfg.horizon
        if self.plan is None:
            return heading_controls(self.dynamics, s, self.cost.goal, n, self.cfg.heading_gain, t)
        tail = self.plan.controls[self._plan_step:]
        return np.concatenate([tail, np.zeros(n - tail.size)])

    def _restart_sequences(self, s: np.ndarray, t: float) -> Iterator[np.ndarray]:
        n = self.cfg.horizon
        if self.plan is not None:
            yield heading_controls(self.dynamics, s, self.cost.goal, n, self.cfg.heading_gain, t)
        for fraction in RESTART_TURNS:
            yield np.full(n, fraction * self.dynamics.u_max)

    def first_collision(self, plan: ILQRSolution) -> float:
        """Index of the first predicted state inside an obstacle, inf if the goal comes first or never"""
        goal = self.cost.goal
        for index, state in enumerate(plan.states.states[1:], start=1):
            if math.hypot(state[0] - goal[0], state[1] - goal[1]) < self.env.success_radius:
                return math.inf
            if not self.env.cell_is_free(self.obstacles, state[0], state[1]):
                return index
        return math.inf

    def _solve(self, s: np.ndarray, t: float, initial: np.ndarray) -> Optional[ILQRSolution]:
        try:
            return solve(self.dynamics, s, self.cost, self.cfg, t0=t, initial_controls=initial)
        except SolverDivergenceError as exc:
            self.log(f"t={t:.1f}: {exc}", logging.DEBUG)
            return None

    def _fallback(self, s: np.ndarray, t: float) -> ILQRSolution:
        controls = heading_controls(self.dynamics, s, self.cost.goal, self.cfg.horizon, self.cfg.heading_gain, t)
        trajectory = rollout_array(self.dynamics, s, controls, t)
        return ILQRSolution(
            states=trajectory, controls=controls, K=np.zeros((controls.size, 3)), k=np.zeros(controls.size),
            total_cost=math.inf, iterations=0, converged=False,
        )

    def _replan(self, s: np.ndarray, t: float) -> None:
        plan = self._solve(s, t, self._warm_start(s, t))
        if plan is None:
            self.log(f"t={t:.1f}: solver diverged; falling back to the heading controller", logging.WARNING)
            plan = self._fallback(s, t)
        if self.cfg.collision_restarts and self.first_collision(plan) < math.inf:
            candidates: List[ILQRSolution] = [plan]
            for initial in self._restart_sequences(s, t):
                candidate = self._solve(s, t, initial)
                if candidate is not None:
                    candidates.append(candidate)
            self.restarts += 1
            # collision-free first, then the latest collision, then the cheapest
            plan = max(candidates, key=lambda c: (self.first_collision(c), -c.total_cost))
            self.log(f"t={t:.1f}: plan hit an obstacle, {len(candidates) - 1} restarts, "
                     f"first collision now at {self.first_collision(plan)}", logging.DEBUG)
        self.plan = plan
        self._plan_step = 0
        self.solves += 1
        self.log(f"t={t:.1f}: plan cost {self.plan.total_cost:.4f} after {self.plan.iterations} iterations",
                 logging.DEBUG)

    def act(self, state: VehicleState, t: float) -> ControlInput:
        if self.dynamics is None:
            raise RuntimeError("reset() must be called before act()")
        s = state.as_array()
        if self.plan is None or self._plan_step >= min(self.cfg.replan_every, self.cfg.horizon):
            self._replan(s, t)
        j = self._plan_step
        ds = s - self.plan.states.states[j]
        ds[2] = wrap_angle(ds[2])
        u = self.plan.controls[j] + float(self.plan.K[j] @ ds)
        self._plan_step += 1
        u_max = self.dynamics.u_max
        return ControlInput(u=min(max(u, -u_max), u_max))
