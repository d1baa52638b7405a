"""Iterative LQR for the drifting Dubins vehicle.

Cost: J = sum_k 1/2 (e_k' W_p e_k + rho u_k^2) + 1/2 e_N' W_f e_N with e_k = s_k - s_f.
The backward pass linearises the dynamics around the current trajectory
(first-order only, no second-order dynamics terms) and the forward pass rolls
the nonlinear model out under u_new = u_old + K (s_new - s_old) + alpha * k.
"""
import logging
import math
from typing import List, NamedTuple, Optional, Sequence, Tuple

import numpy as np

from models.data_models import ILQRConfig, ILQRSolution, QuadraticCost, Trajectory
from models.exceptions import SolverDivergenceError
from services.dynamics import DynamicsModel, rollout_array
from utils.helpers import wrap_angle, wrap_angles

logger = logging.getLogger(__name__)


class NonPositiveCurvature(Exception):
    """Q_uu + mu <= 0 at some step; the caller raises mu and retries"""

    def __init__(self, step: int, q_uu: float):
        self.step = step
        self.q_uu = q_uu
        super().__init__(f"Q_uu + mu = {q_uu} at step {step}")


class BackwardPassResult(NamedTuple):
    K: np.ndarray  # (N, 3)
    k: np.ndarray  # (N,)
    expected: np.ndarray  # (2,): predicted dJ(alpha) = alpha*expected[0] + alpha^2*expected[1]

    def predicted_change(self, alpha: float) -> float:
        return alpha * self.expected[0] + alpha * alpha * self.expected[1]


def state_errors(states: np.ndarray, goal: np.ndarray, wrap_heading: bool = True) -> np.ndarray:
    errors = np.asarray(states, dtype=float) - np.asarray(goal, dtype=float)
    if wrap_heading:
        errors[..., 2] = wrap_angles(errors[..., 2])
    return errors


def total_cost(states: np.ndarray, controls: Sequence[float], cost: QuadraticCost,
               wrap_heading: bool = True) -> float:
    states = states.states if isinstance(states, Trajectory) else np.asarray(states, dtype=float)
    controls = np.asarray(controls, dtype=float)
    if len(states) != len(controls) + 1:
        raise ValueError("expected one more state than controls")
    errors = state_errors(states, cost.goal, wrap_heading)
    running = 0.5 * np.einsum("ki,ij,kj->", errors[:-1], cost.W_p, errors[:-1])
    effort = 0.5 * cost.rho * float(np.dot(controls, controls))
    terminal = 0.5 * errors[-1] @ cost.W_f @ errors[-1]
    return float(running + effort + terminal)


def backward_pass(states: np.ndarray, controls: np.ndarray, dynamics: DynamicsModel,
                  cost: QuadraticCost, mu: float, t0: float = 0.0) -> BackwardPassResult:
    n_steps = len(controls)
    errors = state_errors(states, cost.goal, dynamics.wraps_heading)
    W_p, rho = cost.W_p, cost.rho
    u_max = dynamics.u_max

    # terminal expansion: M_N = W_f, m_N = -W_f (s_f - s_N)
    M = np.array(cost.W_f, dtype=float)
    m = M @ errors[-1]
    K = np.zeros((n_steps, states.shape[1]))
    k = np.zeros(n_steps)
    expected = np.zeros(2)

    for step in reversed(range(n_steps)):
        A, B = dynamics.jacobians_array(states[step], float(controls[step]), t0 + step * dynamics.dt)
        b = B[:, 0]
        Q_s = W_p @ errors[step] + A.T @ m
        Q_u = rho * controls[step] + b @ m
        Q_ss = W_p + A.T @ M @ A
        Q_uu = rho + b @ M @ b
        Q_us = b @ M @ A

        Q_uu_reg = Q_uu + mu
        if Q_uu_reg <= 0.0:
            raise NonPositiveCurvature(step, Q_uu_reg)
        # box-constrained step: a clamped control gets no feedback
        u = float(controls[step])
        k_free = -Q_u / Q_uu_reg
        k[step] = min(max(k_free, -u_max - u), u_max - u)
        if k[step] != k_free or abs(u + k[step]) >= u_max:
            K[step] = 0.0
        else:
            K[step] = -Q_us / Q_uu_reg

        expected[0] += k[step] * Q_u
        expected[1] += 0.5 * k[step] * k[step] * Q_uu

        M = Q_ss + Q_uu * np.outer(K[step], K[step]) + np.outer(K[step], Q_us) + np.outer(Q_us, K[step])
        m = Q_s + K[step] * Q_uu * k[step] + K[step] * Q_u + Q_us * k[step]
        M = 0.5 * (M + M.T)

    return BackwardPassResult(K=K, k=k, expected=expected)


def forward_pass(states_prev: np.ndarray, controls_prev: np.ndarray, K: np.ndarray, k: np.ndarray,
                 alpha: float, dynamics: DynamicsModel, t0: float = 0.0) -> Trajectory:
    n_steps = len(controls_prev)
    states = np.empty_like(states_prev)
    controls = np.empty(n_steps)
    states[0] = states_prev[0]
    for step in range(n_steps):
        ds = states[step] - states_prev[step]
        if dynamics.wraps_heading:
            ds[2] = wrap_angle(ds[2])
        u = controls_prev[step] + K[step] @ ds + alpha * k[step]
        controls[step] = min(max(u, -dynamics.u_max), dynamics.u_max)
        states[step + 1] = dynamics.step_array(states[step], controls[step], t0 + step * dynamics.dt)
    times = t0 + np.arange(n_steps + 1) * dynamics.dt
    return Trajectory(states=states, controls=controls, times=times)


def heading_controls(dynamics: DynamicsModel, s0: np.ndarray, goal: np.ndarray, n_steps: int,
                     gain: float = 1.0, t0: float = 0.0) -> np.ndarray:
    """Point-at-goal proportional heading controller rolled out once"""
    s = np.asarray(s0, dtype=float)
    controls = np.empty(n_steps)
    for step in range(n_steps):
        bearing = math.atan2(goal[1] - s[1], goal[0] - s[0])
        u = gain * wrap_angle(bearing - s[2]) / dynamics.dt
        controls[step] = min(max(u, -dynamics.u_max), dynamics.u_max)
        s = dynamics.step_array(s, controls[step], t0 + step * dynamics.dt)
    return controls


def _raise_mu(mu: float, cfg: ILQRConfig) -> float:
    return max(cfg.mu_min, mu * cfg.mu_factor)


def _lower_mu(mu: float, cfg: ILQRConfig) -> float:
    mu = mu / cfg.mu_decrease
    return 0.0 if mu < cfg.mu_min else mu


def _final_gains(states: np.ndarray, controls: np.ndarray, dynamics: DynamicsModel, cost: QuadraticCost,
                 cfg: ILQRConfig, mu: float, t0: float) -> Tuple[np.ndarray, np.ndarray, float]:
    """Gains linearised around the returned trajectory; zero gains if no mu up to mu_max works"""
    while mu <= cfg.mu_max:
        try:
            result = backward_pass(states, controls, dynamics, cost, mu, t0)
            return result.K, result.k, mu
        except NonPositiveCurvature as exc:
            logger.debug("final gains: %s", exc)
            mu = _raise_mu(mu, cfg)
    return np.zeros((len(controls), states.shape[1])), np.zeros(len(controls)), mu


def solve(dynamics: DynamicsModel, s0: np.ndarray, cost: QuadraticCost, cfg: ILQRConfig,
          t0: float = 0.0, initial_controls: Optional[Sequence[float]] = None) -> ILQRSolution:
    s0 = np.asarray(s0, dtype=float)
    n_steps = cfg.horizon
    if initial_controls is None:
        if dynamics.wraps_heading:
            initial_controls = heading_controls(dynamics, s0, cost.goal, n_steps, cfg.heading_gain, t0)
        else:
            initial_controls = np.zeros(n_steps)
    controls = np.clip(np.asarray(initial_controls, dtype=float), -dynamics.u_max, dynamics.u_max)
    if controls.size != n_steps:
        raise ValueError(f"expected {n_steps} initial controls, got {controls.size}")

    trajectory = rollout_array(dynamics, s0, controls, t0)
    J = total_cost(trajectory.states, controls, cost, dynamics.wraps_heading)
    if not math.isfinite(J):
        raise SolverDivergenceError(0, J)

    cost_history: List[float] = [J]
    ratios: List[float] = []
    K = np.zeros((n_steps, s0.size))
    k = np.zeros(n_steps)
    mu = cfg.mu_init
    converged = False
    iterations = 0
    fresh = False  # K, k were computed around the current trajectory
    gains_mu = mu

    while iterations < cfg.max_iters:
        iterations += 1
        try:
            result = backward_pass(trajectory.states, controls, dynamics, cost, mu, t0)
        except NonPositiveCurvature as exc:
            logger.debug("iteration %d: %s", iterations, exc)
            mu = _raise_mu(mu, cfg)
            if mu > cfg.mu_max:
                break
            continue
        K, k, fresh, gains_mu = result.K, result.k, True, mu

        predicted_decrease = -result.predicted_change(1.0)
        if predicted_decrease <= cfg.cost_tol * abs(J) + 1e-15:
            converged = True
            break

        accepted = False
        for alpha in cfg.linesearch_alphas:
            candidate = forward_pass(trajectory.states, controls, K, k, alpha, dynamics, t0)
            J_new = total_cost(candidate.states, candidate.controls, cost, dynamics.wraps_heading)
            if not math.isfinite(J_new):
                raise SolverDivergenceError(iterations, J_new)
            if J_new < J:
                accepted = True
                if alpha == 1.0 and predicted_decrease > 0:
                    ratios.append((J - J_new) / predicted_decrease)
                break

        if not accepted:
            mu = _raise_mu(mu, cfg)
            logger.debug("iteration %d: no step accepted, mu -> %.3g", iterations, mu)
            if mu > cfg.mu_max:
                break
            continue

        relative = (J - J_new) / max(abs(J), 1e-12)
        trajectory, controls, J = candidate, candidate.controls, J_new
        fresh = False
        cost_history.append(J)
        mu = _lower_mu(mu, cfg)
        logger.debug("iteration %d: alpha=%.2f J=%.6g mu=%.3g", iterations, alpha, J, mu)
        if relative < cfg.cost_tol:
            converged = True
            break

    if not fresh:
        K, k, gains_mu = _final_gains(trajectory.states, controls, dynamics, cost, cfg, mu, t0)
    return ILQRSolution(
        states=trajectory, controls=controls, K=K, k=k, total_cost=J,
        iterations=iterations, converged=converged, cost_history=cost_history,
        reduction_ratios=ratios, mu=gains_mu,
    )
