import math
from typing import Sequence, Tuple

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]"""
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised wrap_angle"""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi)
    wrapped = np.where(wrapped <= 0.0, wrapped + 2.0 * np.pi, wrapped)
    return wrapped - np.pi


def calculate_distance(point1: Sequence[float], point2: Sequence[float]) -> float:
    """Euclidean distance between two planar points"""
    return math.hypot(point1[0] - point2[0], point1[1] - point2[1])


def unit_direction(origin: Sequence[float], target: Sequence[float]) -> Tuple[float, float, float]:
    """Unit vector from origin to target and the distance; (0, 0, 0) when they coincide"""
    dx = target[0] - origin[0]
    dy = target[1] - origin[1]
    distance = math.hypot(dx, dy)
    if distance == 0.0:
        return 0.0, 0.0, 0.0
    return dx / distance, dy / distance, distance


def heading_to(origin: Sequence[float], target: Sequence[float]) -> float:
    return math.atan2(target[1] - origin[1], target[0] - origin[0])


def cell_index(x: float, y: float, cell_size: float) -> Tuple[int, int]:
    """Grid cell containing a world point (cell centres sit on multiples of cell_size)"""
    return int(math.floor(x / cell_size + 0.5)), int(math.floor(y / cell_size + 0.5))


def count_cell_transitions(positions: np.ndarray, cell_size: float) -> int:
    """Number of steps on which the vehicle moved into a different grid cell"""
    if len(positions) < 2:
        return 0
    cells = np.floor(np.asarray(positions, dtype=float) / cell_size + 0.5).astype(int)
    changed = np.any(cells[1:] != cells[:-1], axis=1)
    return int(changed.sum())


def format_time_duration(seconds: float) -> str:
    """Format a wall-clock duration in seconds to a human readable string"""
    if seconds < 60:
        return f"{seconds:.1f}s"
    minutes = int(seconds // 60)
    if minutes < 60:
        return f"{minutes}m {seconds - 60 * minutes:.0f}s"
    hours = minutes // 60
    return f"{hours}h {minutes % 60}m"
