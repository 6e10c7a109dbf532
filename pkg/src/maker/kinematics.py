"""Ground-truth kinematics and trajectory difficulty scores."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import PreconditionError

EARTH_RADIUS_M = 6_371_000.0
IRREGULARITY_EPS = 1e-9


class Level(str, enum.Enum):
    LOW = "Low"
    MEDIUM = "Medium"
    HIGH = "High"


@dataclass(frozen=True, eq=False)
class KinematicProfile:
    velocity: np.ndarray  # (n-1,) m/s
    acceleration: np.ndarray  # (n-2,) m/s^2
    spatial_complexity: float
    temporal_irregularity: float


def haversine_m(g1, g2) -> np.ndarray | float:
    """Great-circle distance in meters between (..., 2) lon/lat degree arrays."""
    a = np.asarray(g1, dtype=np.float64)
    b = np.asarray(g2, dtype=np.float64)
    lon1, lat1 = np.radians(a[..., 0]), np.radians(a[..., 1])
    lon2, lat2 = np.radians(b[..., 0]), np.radians(b[..., 1])
    s = np.sin((lat2 - lat1) / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin((lon2 - lon1) / 2) ** 2
    d = 2 * EARTH_RADIUS_M * np.arcsin(np.sqrt(np.clip(s, 0.0, 1.0)))
    return float(d) if d.ndim == 0 else d


def _check_times(timestamps: np.ndarray) -> np.ndarray:
    t = np.asarray(timestamps, dtype=np.float64)
    if np.any(np.diff(t) <= 0):
        raise PreconditionError("timestamps must be strictly increasing")
    return t


def velocity_series(positions, timestamps) -> np.ndarray:
    pos = np.asarray(positions, dtype=np.float64)
    if len(pos) < 2:
        raise PreconditionError("velocity needs at least 2 points")
    t = _check_times(timestamps)
    return haversine_m(pos[:-1], pos[1:]) / np.diff(t)


def acceleration_series(velocity, timestamps) -> np.ndarray:
    """a_i = (v_{i+1} - v_i) / (t_{i+2} - t_{i+1}).

    ``timestamps`` are the n point timestamps the n-1 velocities came from.
    """
    v = np.asarray(velocity, dtype=np.float64)
    if len(v) < 2:
        raise PreconditionError("acceleration needs at least 2 velocities")
    t = _check_times(timestamps)
    if len(t) != len(v) + 1:
        raise PreconditionError(f"expected {len(v) + 1} timestamps for {len(v)} velocities, got {len(t)}")
    return np.diff(v) / np.diff(t)[1:]


def spatial_complexity(positions) -> float:
    """Population std of consecutive planar step lengths in degree space."""
    pos = np.asarray(positions, dtype=np.float64)
    if len(pos) < 3:
        raise PreconditionError("spatial complexity needs at least 3 points")
    steps = np.hypot(*np.diff(pos, axis=0).T)
    return float(np.std(steps))


def temporal_irregularity(input_intervals, pred_intervals, eps: float = IRREGULARITY_EPS) -> float:
    """Relative change in interval spread from the input part to the prediction part."""
    a = np.asarray(input_intervals, dtype=np.float64)
    b = np.asarray(pred_intervals, dtype=np.float64)
    if a.size == 0 or b.size == 0:
        raise PreconditionError("both interval lists must be non-empty")
    s_in, s_pred = float(np.std(a)), float(np.std(b))
    return abs(s_pred - s_in) / (s_in + eps)


def sample_irregularity(history_timestamps, future_timestamps) -> float:
    """Temporal irregularity of one window.

    Input intervals are the gaps inside the history; prediction intervals are
    the gaps from the last history point through the future timestamps.
    """
    th = np.asarray(history_timestamps, dtype=np.float64)
    tf = np.asarray(future_timestamps, dtype=np.float64)
    return temporal_irregularity(np.diff(th), np.diff(np.concatenate([th[-1:], tf])))


def kinematic_profile(positions, timestamps) -> KinematicProfile:
    pos = np.asarray(positions, dtype=np.float64)
    t = np.asarray(timestamps, dtype=np.float64)
    v = velocity_series(pos, t)
    a = acceleration_series(v, t)
    half = len(t) // 2
    irr = sample_irregularity(t[:half], t[half:]) if half >= 2 else 0.0
    return KinematicProfile(v, a, spatial_complexity(pos), irr)


def quartiles(scores) -> tuple[float, float]:
    """Q1 and Q3 by linear interpolation between order statistics."""
    x = np.sort(np.asarray(scores, dtype=np.float64))
    return float(np.percentile(x, 25)), float(np.percentile(x, 75))


def quartile_levels(scores) -> list[Level]:
    x = np.asarray(scores, dtype=np.float64)
    if x.size < 4:
        raise PreconditionError("quartile levels need at least 4 scores")
    q1, q3 = quartiles(x)
    return [Level.HIGH if s > q3 else Level.LOW if s < q1 else Level.MEDIUM for s in x]


def meters_per_degree() -> float:
    """Arc length of one degree of a great circle."""
    return math.pi / 180.0 * EARTH_RADIUS_M
