"""Observation encoding for the policy network.

One slice per simulator step: channel 0/1 hold the disturbance components,
channel 2 the occupancy map (obstacle -1, free 0, goal +0.5, robot +1). The
vehicle vector carries heading and the direction and normalised distance to the
goal, never the absolute position.
"""
from collections import deque
from typing import Deque, Optional, Sequence, Tuple

import numpy as np

from models.data_models import Observation, VehicleState
from models.exceptions import ConfigurationError
from services.disturbance_field import DisturbanceField
from services.policy_network import ENV_CHANNELS, ENV_SLICES
from utils.helpers import cell_index, unit_direction

OBSTACLE = -1.0
GOAL = 0.5
ROBOT = 1.0


class ObservationEncoder:
    """Builds the 3-slice observation of one episode; keeps its own history"""

    def __init__(self, field: DisturbanceField, obstacles: np.ndarray, grid_size: Optional[int] = None,
                 time_scale: float = 1.0):
        obstacles = np.asarray(obstacles, dtype=bool)
        if obstacles.shape != (field.grid_h, field.grid_w):
            raise ConfigurationError(
                f"obstacle map {obstacles.shape} does not match field {field.grid_h}x{field.grid_w}")
        size = grid_size if grid_size is not None else max(field.grid_w, field.grid_h)
        if size < field.grid_w or size < field.grid_h:
            raise ConfigurationError(
                f"network grid {size} is smaller than the {field.grid_w}x{field.grid_h} field")
        self.field = field
        self.grid_size = size
        self.time_scale = time_scale
        self.diagonal = float(np.hypot(field.grid_w, field.grid_h) * field.cell_size)
        # cells outside the field read as obstacles
        self._occupancy = np.full((size, size), OBSTACLE)
        self._occupancy[:field.grid_h, :field.grid_w] = np.where(obstacles, OBSTACLE, 0.0)
        self._history: Deque[np.ndarray] = deque(maxlen=ENV_SLICES)

    def reset(self) -> None:
        self._history.clear()

    def seed_history(self, frames: Sequence[np.ndarray]) -> None:
        for frame in list(frames)[-(ENV_SLICES - 1):]:
            self._history.append(np.asarray(frame, dtype=float))

    def _mark(self, grid: np.ndarray, point: Sequence[float], value: float) -> None:
        ix, iy = cell_index(point[0], point[1], self.field.cell_size)
        if 0 <= ix < self.field.grid_w and 0 <= iy < self.field.grid_h:
            grid[iy, ix] = value

    def env_slice(self, state: VehicleState, goal: Tuple[float, float], t: float) -> np.ndarray:
        g = self.grid_size
        h, w = self.field.grid_h, self.field.grid_w
        frame = np.zeros((ENV_CHANNELS, g, g))
        u, v = self.field.sample_grid(self.time_scale * t)
        frame[0, :h, :w] = u
        frame[1, :h, :w] = v
        frame[2] = self._occupancy
        self._mark(frame[2], goal, GOAL)
        self._mark(frame[2], state.position, ROBOT)
        return frame

    def vehicle_vector(self, state: VehicleState, goal: Tuple[float, float]) -> np.ndarray:
        ux, uy, distance = unit_direction(state.position, goal)
        return np.array([np.cos(state.theta), np.sin(state.theta), ux, uy, distance / self.diagonal])

    def encode(self, state: VehicleState, goal: Tuple[float, float], t: float) -> Observation:
        """Push the current slice and return the last three, oldest first (padded by repetition)"""
        self._history.append(self.env_slice(state, goal, t))
        slices = list(self._history)
        slices = [slices[0]] * (ENV_SLICES - len(slices)) + slices
        return Observation(env=np.stack(slices), vehicle=self.vehicle_vector(state, goal))


def encode(field: DisturbanceField, state: VehicleState, goal: Tuple[float, float], obstacles: np.ndarray,
           t: float, history: Sequence[np.ndarray] = (), grid_size: Optional[int] = None) -> Observation:
    """Stateless form: `history` holds earlier env slices, oldest first"""
    encoder = ObservationEncoder(field, obstacles, grid_size)
    encoder.seed_history(history)
    return encoder.encode(state, goal, t)
