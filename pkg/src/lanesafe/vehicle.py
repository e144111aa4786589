"""Shared kinematic state containers used across the planning stack."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


@dataclass
class VehicleState:
    """Snapshot of one vehicle at one instant.

    Convention: ``x`` is the position of the FRONT bumper along the road axis,
    so the vehicle body occupies the interval [x - length, x]. ``y`` is the
    lateral position of the vehicle centerline. ``lane`` is the 1-based index
    of the nearest lane, counted from the rightmost lane.
    """

    id: int
    x: float            # front-bumper longitudinal position [m]
    y: float            # lateral center position [m]
    v: float            # speed [m/s], >= 0
    a: float            # longitudinal acceleration [m/s^2]
    heading: float      # [rad], 0 = along the road axis
    lane: int
    length: float = 5.0
    width: float = 1.8
    kind: str = "car"   # "car" | "truck"

    def __post_init__(self):
        if self.v < 0:
            raise ValueError(f"vehicle {self.id}: speed must be >= 0, got {self.v}")
        if self.length <= 0:
            raise ValueError(f"vehicle {self.id}: length must be > 0")
        for name in ("x", "y", "v", "a", "heading"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"vehicle {self.id}: non-finite field {name}")
        if self.kind not in ("car", "truck"):
            raise ValueError(f"vehicle {self.id}: unknown kind {self.kind!r}")

    def copy(self, **changes) -> "VehicleState":
        return replace(self, **changes)


@dataclass
class Trajectory:
    """Timestamped sequence of poses/speeds, all arrays of equal length."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    heading: np.ndarray

    def __post_init__(self):
        n = len(self.t)
        for name in ("x", "y", "v", "heading"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if len(arr) != n:
                raise ValueError(f"trajectory field {name} has length {len(arr)}, expected {n}")
            setattr(self, name, arr)
        self.t = np.asarray(self.t, dtype=float)

    def __len__(self) -> int:
        return len(self.t)


def lane_center(lane: int, lane_width: float) -> float:
    """Lateral center of a 1-based lane index (lane 1 centered at y=0)."""
    return (lane - 1) * lane_width


def nearest_lane(y: float, lane_width: float, lane_count: int) -> int:
    """1-based index of the lane whose center is closest to ``y``."""
    idx = int(round(y / lane_width)) + 1
    return min(max(idx, 1), lane_count)
