import logging
import math
from typing import Dict, Iterable, Optional, Tuple, Union

import numpy as np

from models.data_models import FieldJacobian, FieldPatternSpec, PatternKind
from models.exceptions import CropError, FieldConstructionError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]


class DisturbanceField:
    """Time-indexed 2D flow field on a regular grid.

    The centre of cell (ix, iy) sits at world (ix * cell_size, iy * cell_size).
    Frames are stored as [frame, iy, ix]. Instances are read-only after
    construction and can be shared between rollout workers.
    """

    def __init__(self, timestamps: Iterable[float], u_east: np.ndarray, v_north: np.ndarray,
                 cell_size: float = 1.0, strength_cap: float = 1.0):
        times = np.asarray(list(timestamps), dtype=float)
        u = np.array(u_east, dtype=float, copy=True)
        v = np.array(v_north, dtype=float, copy=True)
        if u.ndim == 2:
            u, v = u[None], v[None]
        if times.size == 0 or u.ndim != 3 or u.shape[0] != times.size:
            raise FieldConstructionError("frames must be non-empty and match the timestamps")
        if u.shape != v.shape:
            raise FieldConstructionError("u_east and v_north frames must share dimensions")
        if np.any(np.diff(times) <= 0):
            raise FieldConstructionError("frame timestamps must be strictly increasing")
        if u.shape[1] < 1 or u.shape[2] < 1:
            raise FieldConstructionError("grid must have at least one cell")
        if not cell_size > 0 or not strength_cap > 0:
            raise FieldConstructionError("cell_size and strength_cap must be > 0")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise FieldConstructionError("flow components must be finite")

        magnitude = np.hypot(u, v)
        over = magnitude > strength_cap
        if np.any(over):
            shrink = np.where(over, strength_cap / np.where(over, magnitude, 1.0), 1.0)
            u, v = u * shrink, v * shrink
            logger.debug("clamped %d flow vectors to strength cap %.3f", int(over.sum()), strength_cap)

        for array in (times, u, v):
            array.setflags(write=False)
        self.timestamps = times
        self.u = u
        self.v = v
        self.cell_size = float(cell_size)
        self.strength_cap = float(strength_cap)

    # shape ----------------------------------------------------------------

    @property
    def grid_w(self) -> int:
        return self.u.shape[2]

    @property
    def grid_h(self) -> int:
        return self.u.shape[1]

    @property
    def n_frames(self) -> int:
        return self.timestamps.size

    def frame_spacing(self) -> Optional[float]:
        if self.n_frames < 2:
            return None
        return float(np.median(np.diff(self.timestamps)))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, DisturbanceField):
            return NotImplemented
        return (self.cell_size == other.cell_size and self.strength_cap == other.strength_cap
                and np.array_equal(self.timestamps, other.timestamps)
                and np.array_equal(self.u, other.u) and np.array_equal(self.v, other.v))

    def __repr__(self) -> str:
        return (f"DisturbanceField({self.grid_w}x{self.grid_h}, frames={self.n_frames}, "
                f"cell_size={self.cell_size}, cap={self.strength_cap})")

    # interpolation ----------------------------------------------------------

    def _time_bracket(self, t: float) -> Tuple[int, int, float]:
        times = self.timestamps
        if t <= times[0]:
            return 0, 0, 0.0
        if t >= times[-1]:
            last = self.n_frames - 1
            return last, last, 0.0
        upper = int(np.searchsorted(times, t, side="right"))
        lower = upper - 1
        weight = (t - times[lower]) / (times[upper] - times[lower])
        return lower, upper, float(weight)

    def sample_grid(self, t: float) -> Tuple[np.ndarray, np.ndarray]:
        """Full (u, v) frames linearly interpolated to time t, clamped to the stored window"""
        lower, upper, w = self._time_bracket(t)
        if w == 0.0:
            return self.u[lower], self.v[lower]
        return ((1.0 - w) * self.u[lower] + w * self.u[upper],
                (1.0 - w) * self.v[lower] + w * self.v[upper])

    @staticmethod
    def _axis_weights(coord: np.ndarray, size: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        coord = np.clip(coord, 0.0, size - 1)
        if size == 1:
            zeros = np.zeros_like(coord, dtype=int)
            return zeros, zeros, np.zeros_like(coord)
        i0 = np.minimum(np.floor(coord).astype(int), size - 2)
        return i0, i0 + 1, coord - i0

    def _bilinear(self, grid: np.ndarray, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        ix0, ix1, tx = self._axis_weights(x / self.cell_size, self.grid_w)
        iy0, iy1, ty = self._axis_weights(y / self.cell_size, self.grid_h)
        return ((1 - tx) * (1 - ty) * grid[iy0, ix0] + tx * (1 - ty) * grid[iy0, ix1]
                + (1 - tx) * ty * grid[iy1, ix0] + tx * ty * grid[iy1, ix1])

    def sample(self, x: ArrayLike, y: ArrayLike, t: float) -> np.ndarray:
        """Flow at world point(s): bilinear in space, linear in time, clamped at the edges.

        Scalar x, y return a length-2 vector; arrays return shape (..., 2).
        """
        xs = np.asarray(x, dtype=float)
        ys = np.asarray(y, dtype=float)
        lower, upper, w = self._time_bracket(t)
        flow_x = self._bilinear(self.u[lower], xs, ys)
        flow_y = self._bilinear(self.v[lower], xs, ys)
        if w > 0.0:
            flow_x = (1.0 - w) * flow_x + w * self._bilinear(self.u[upper], xs, ys)
            flow_y = (1.0 - w) * flow_y + w * self._bilinear(self.v[upper], xs, ys)
        return np.stack([flow_x, flow_y], axis=-1)

    def jacobian(self, x: float, y: float, t: float, step: Optional[float] = None) -> FieldJacobian:
        """Spatial partials by central differences of sample(), step cell_size / 2 by default"""
        h = self.cell_size / 2.0 if step is None else float(step)
        xs = np.array([x + h, x - h, x, x], dtype=float)
        ys = np.array([y, y, y + h, y - h], dtype=float)
        flow = self.sample(xs, ys, t)
        d_dx = (flow[0] - flow[1]) / (2.0 * h)
        d_dy = (flow[2] - flow[3]) / (2.0 * h)
        return FieldJacobian(dwx_dx=float(d_dx[0]), dwx_dy=float(d_dy[0]),
                             dwy_dx=float(d_dx[1]), dwy_dy=float(d_dy[1]))

    # derived fields -------------------------------------------------------

    def crop(self, x0: int, y0: int, w: int, h: int) -> "DisturbanceField":
        """Sub-field of cells [x0, x0+w) x [y0, y0+h); its world origin is the crop corner"""
        if w < 1 or h < 1 or x0 < 0 or y0 < 0 or x0 + w > self.grid_w or y0 + h > self.grid_h:
            raise CropError(
                f"crop window ({x0},{y0},{w},{h}) outside {self.grid_w}x{self.grid_h} grid")
        return DisturbanceField(
            self.timestamps, self.u[:, y0:y0 + h, x0:x0 + w], self.v[:, y0:y0 + h, x0:x0 + w],
            cell_size=self.cell_size, strength_cap=self.strength_cap,
        )

    def max_magnitude(self) -> float:
        return float(np.hypot(self.u, self.v).max())

    def summary(self) -> Dict[str, float]:
        spacing = self.frame_spacing()
        return {
            "grid_w": self.grid_w,
            "grid_h": self.grid_h,
            "frames": self.n_frames,
            "frame_spacing": spacing if spacing is not None else 0.0,
            "max_magnitude": round(self.max_magnitude(), 6),
            "mean_magnitude": round(float(np.hypot(self.u, self.v).mean()), 6),
        }


# --- artificial patterns -----------------------------------------------------

def pattern_center(spec: FieldPatternSpec, t: float, default: Tuple[float, float]) -> Tuple[float, float]:
    """Centre of the pattern at time t: triangle-wave shuttle between center and center_end"""
    start = spec.center if spec.center is not None else default
    if spec.is_static:
        return float(start[0]), float(start[1])
    end = spec.center_end
    phase = (t / spec.period) % 1.0
    s = 2.0 * phase if phase <= 0.5 else 2.0 * (1.0 - phase)
    return (start[0] + s * (end[0] - start[0]), start[1] + s * (end[1] - start[1]))


def pattern_flow(spec: FieldPatternSpec, x: ArrayLike, y: ArrayLike,
                 center: Tuple[float, float]) -> Tuple[np.ndarray, np.ndarray]:
    """Closed-form flow of an artificial pattern centred at `center`"""
    dx = np.asarray(x, dtype=float) - center[0]
    dy = np.asarray(y, dtype=float) - center[1]
    s, scale = spec.strength, spec.scale

    if spec.kind == PatternKind.VORTEX:
        r2 = (dx * dx + dy * dy) / (scale * scale)
        gain = (s / scale) * np.exp(0.5 * (1.0 - r2))
        return -gain * dy, gain * dx
    if spec.kind == PatternKind.SPIN:
        gain = s / scale
        return -gain * dy, gain * dx
    if spec.kind == PatternKind.CENTRIPETAL:
        r = np.hypot(dx, dy)
        decay = np.ones_like(r) if math.isinf(scale) else np.exp(-(r * r) / (2.0 * scale * scale))
        safe_r = np.where(r > 0.0, r, 1.0)
        gain = np.where(r > 0.0, s * decay / safe_r, 0.0)
        return -gain * dx, -gain * dy
    if spec.kind == PatternKind.MEANDER:
        along = np.full_like(dx, s)
        return along, spec.amplitude * s * np.cos(2.0 * math.pi * dx / scale)
    if spec.kind == PatternKind.UNIFORM:
        return (np.full_like(dx, s * math.cos(spec.direction)),
                np.full_like(dx, s * math.sin(spec.direction)))
    raise FieldConstructionError(f"unknown pattern kind: {spec.kind}")


def pattern_jacobian(spec: FieldPatternSpec, x: float, y: float,
                     center: Tuple[float, float]) -> np.ndarray:
    """Closed-form partials [[dwx/dx, dwx/dy], [dwy/dx, dwy/dy]] of an artificial pattern"""
    dx, dy = x - center[0], y - center[1]
    s, scale = spec.strength, spec.scale
    if spec.kind == PatternKind.SPIN:
        g = s / scale
        return np.array([[0.0, -g], [g, 0.0]])
    if spec.kind == PatternKind.UNIFORM:
        return np.zeros((2, 2))
    if spec.kind == PatternKind.MEANDER:
        k = 2.0 * math.pi / scale
        return np.array([[0.0, 0.0], [-spec.amplitude * s * k * math.sin(k * dx), 0.0]])
    if spec.kind == PatternKind.VORTEX:
        g = (s / scale) * math.exp(0.5 * (1.0 - (dx * dx + dy * dy) / (scale * scale)))
        gx, gy = -g * dx / (scale * scale), -g * dy / (scale * scale)
        return np.array([[-gx * dy, -gy * dy - g], [gx * dx + g, gy * dx]])
    if spec.kind == PatternKind.CENTRIPETAL:
        r = math.hypot(dx, dy)
        if r == 0.0:
            raise FieldConstructionError("centripetal partials are undefined at the centre")
        decay = 1.0 if math.isinf(scale) else math.exp(-r * r / (2.0 * scale * scale))
        g = s * decay / r
        dg_dr = -g / r - (0.0 if math.isinf(scale) else g * r / (scale * scale))
        gx, gy = dg_dr * dx / r, dg_dr * dy / r
        return np.array([[-(gx * dx + g), -gy * dx], [-gx * dy, -(gy * dy + g)]])
    raise FieldConstructionError(f"unknown pattern kind: {spec.kind}")


def generate(spec: FieldPatternSpec, grid_w: int, grid_h: int, n_frames: int, dt_frame: float,
             cell_size: float = 1.0, strength_cap: float = 1.0) -> DisturbanceField:
    """Sample an artificial pattern at every cell centre for n_frames frames.

    strength_cap defaults to the default vehicle speed (1 cell/s).
    """
    if grid_w < 4 or grid_h < 4:
        raise FieldConstructionError("grid dimensions must be >= 4")
    if n_frames < 1:
        raise FieldConstructionError("n_frames must be >= 1")
    if not dt_frame > 0:
        raise FieldConstructionError("dt_frame must be > 0")

    xs = np.arange(grid_w, dtype=float) * cell_size
    ys = np.arange(grid_h, dtype=float) * cell_size
    gx, gy = np.meshgrid(xs, ys)  # [iy, ix]
    default_center = ((grid_w - 1) * cell_size / 2.0, (grid_h - 1) * cell_size / 2.0)
    times = np.arange(n_frames, dtype=float) * dt_frame

    u = np.empty((n_frames, grid_h, grid_w))
    v = np.empty((n_frames, grid_h, grid_w))
    for frame, t in enumerate(times):
        center = pattern_center(spec, float(t), default_center)
        u[frame], v[frame] = pattern_flow(spec, gx, gy, center)
    if spec.noise > 0.0:
        rng = np.random.default_rng(spec.seed)
        sigma = spec.noise * spec.strength
        u += rng.normal(0.0, sigma, size=u.shape)
        v += rng.normal(0.0, sigma, size=v.shape)

    logger.info("generated %s field %dx%d with %d frames", spec.kind.value, grid_w, grid_h, n_frames)
    return DisturbanceField(times, u, v, cell_size=cell_size, strength_cap=strength_cap)
