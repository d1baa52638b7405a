"""Discrete-time Dubins vehicle drifting in a disturbance field.

    s_{k+1} = s_k + (v cos(theta_k) + w_x(x_k, y_k), v sin(theta_k) + w_y(x_k, y_k), u_k) * dt

Explicit Euler, disturbance sampled at the step's start point and time, heading
wrapped into (-pi, pi] after the update.
"""
import math
from typing import Protocol, Sequence, Tuple, Union

import numpy as np

from models.data_models import (
    ControlInput, DynamicsJacobians, MotionParams, Trajectory, VehicleState,
)
from services.disturbance_field import DisturbanceField
from utils.helpers import wrap_angle

ControlLike = Union[ControlInput, float]


def _control_value(u: ControlLike) -> float:
    return float(u.u) if isinstance(u, ControlInput) else float(u)


class DynamicsModel(Protocol):
    """What the iLQR solver needs from a system: a step map and its linearisation"""
    u_max: float
    dt: float
    wraps_heading: bool

    def step_array(self, s: np.ndarray, u: float, t: float) -> np.ndarray: ...

    def jacobians_array(self, s: np.ndarray, u: float, t: float) -> Tuple[np.ndarray, np.ndarray]: ...


class FieldDynamics:
    """The drifting vehicle over a disturbance field; time_scale maps simulated seconds to field seconds"""
    wraps_heading = True

    def __init__(self, field: DisturbanceField, params: MotionParams, time_scale: float = 1.0):
        self.field = field
        self.params = params
        self.time_scale = time_scale

    @property
    def u_max(self) -> float:
        return self.params.u_max

    @property
    def dt(self) -> float:
        return self.params.dt

    def field_time(self, t: float) -> float:
        return self.time_scale * t

    def step_array(self, s: np.ndarray, u: float, t: float) -> np.ndarray:
        v, dt = self.params.v, self.params.dt
        x, y, theta = float(s[0]), float(s[1]), float(s[2])
        wx, wy = self.field.sample(x, y, self.field_time(t))
        return np.array([
            x + (v * math.cos(theta) + wx) * dt,
            y + (v * math.sin(theta) + wy) * dt,
            wrap_angle(theta + u * dt),
        ])

    def jacobians_array(self, s: np.ndarray, u: float, t: float) -> Tuple[np.ndarray, np.ndarray]:
        v, dt = self.params.v, self.params.dt
        theta = float(s[2])
        jac = self.field.jacobian(float(s[0]), float(s[1]), self.field_time(t))
        A = np.array([
            [1.0 + jac.dwx_dx * dt, jac.dwx_dy * dt, -v * math.sin(theta) * dt],
            [jac.dwy_dx * dt, 1.0 + jac.dwy_dy * dt, v * math.cos(theta) * dt],
            [0.0, 0.0, 1.0],
        ])
        B = np.array([[0.0], [0.0], [dt]])
        return A, B


class LinearDynamics:
    """s' = A s + B u; used to check the solver against a Riccati recursion"""
    wraps_heading = False

    def __init__(self, A: np.ndarray, B: np.ndarray, dt: float = 1.0, u_max: float = math.inf):
        self.A = np.asarray(A, dtype=float)
        self.B = np.asarray(B, dtype=float).reshape(-1, 1)
        self.dt = dt
        self.u_max = u_max

    def step_array(self, s: np.ndarray, u: float, t: float) -> np.ndarray:
        return self.A @ s + self.B[:, 0] * u

    def jacobians_array(self, s: np.ndarray, u: float, t: float) -> Tuple[np.ndarray, np.ndarray]:
        return self.A, self.B


def step(s: VehicleState, u: ControlLike, field: DisturbanceField, t: float,
         p: MotionParams) -> VehicleState:
    s_next = FieldDynamics(field, p).step_array(s.as_array(), _control_value(u), t)
    return VehicleState.from_array(s_next)


def jacobians(s: VehicleState, u: ControlLike, field: DisturbanceField, t: float,
              p: MotionParams) -> DynamicsJacobians:
    A, B = FieldDynamics(field, p).jacobians_array(s.as_array(), _control_value(u), t)
    return DynamicsJacobians(A=A, B=B)


def rollout_array(dynamics: DynamicsModel, s0: np.ndarray, controls: Sequence[float],
                  t0: float = 0.0) -> Trajectory:
    controls = np.asarray(controls, dtype=float)
    states = np.empty((controls.size + 1, np.asarray(s0).size))
    states[0] = s0
    for k, u in enumerate(controls):
        states[k + 1] = dynamics.step_array(states[k], float(u), t0 + k * dynamics.dt)
    times = t0 + np.arange(controls.size + 1) * dynamics.dt
    return Trajectory(states=states, controls=controls, times=times)


def rollout(s0: VehicleState, controls: Sequence[ControlLike], field: DisturbanceField, t0: float,
            p: MotionParams) -> Trajectory:
    if len(controls) == 0:
        raise ValueError("rollout needs at least one control")
    values = [_control_value(u) for u in controls]
    return rollout_array(FieldDynamics(field, p), s0.as_array(), values, t0)
