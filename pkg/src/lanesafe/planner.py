"""Cubic-polynomial lane-change trajectory generation.

A lane-change step is planned in a step-local frame: the origin sits at the
vehicle's current position, x points along the road, and the curve
y(x) = a0 + a1*x + a2*x^2 + a3*x^3 carries the vehicle from heading theta_i
at the origin to a lane-aligned pose (zero end heading) at (x_end, y_end).
The four boundary conditions pin the coefficients in closed form:

    a0 = 0
    a1 = tan(theta_i)
    a2 = (3*y_end - 2*x_end*tan(theta_i)) / x_end^2
    a3 = (x_end*tan(theta_i) - 2*y_end) / x_end^3
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vehicle import Trajectory

DEFAULT_LANE_WIDTH = 3.5        # [m]
DEFAULT_CHANGE_EXTENT = 50.0    # [m] longitudinal length of one lane change
DEFAULT_LAT_ACCEL_MAX = 2.5     # [m/s^2] comfort bound


@dataclass(frozen=True)
class LaneChangeStep:
    """Boundary data of one planned lane-change segment.

    theta_i: heading at the segment start [rad], |theta_i| < pi/2.
    x_end:   longitudinal extent of the segment [m], > 0.
    y_end:   lateral displacement at the segment end [m].
    """

    theta_i: float
    x_end: float
    y_end: float

    def __post_init__(self):
        if not (self.x_end > 0):
            raise ValueError(f"x_end must be > 0, got {self.x_end}")
        if not (abs(self.theta_i) < math.pi / 2):
            raise ValueError(f"|theta_i| must be < pi/2, got {self.theta_i}")
        for name in ("theta_i", "x_end", "y_end"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite step field {name}")


@dataclass(frozen=True)
class CubicCurve:
    """Coefficients of y(x) = a0 + a1*x + a2*x^2 + a3*x^3 in the step frame."""

    a0: float
    a1: float
    a2: float
    a3: float

    def __post_init__(self):
        for name in ("a0", "a1", "a2", "a3"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite coefficient {name}")


def fit_cubic(step: LaneChangeStep) -> CubicCurve:
    """Closed-form cubic through the step's four boundary conditions.

    The returned curve satisfies y(0)=0, y'(0)=tan(theta_i),
    y(x_end)=y_end, y'(x_end)=0.
    """
    tan_th = math.tan(step.theta_i)
    xe = step.x_end
    a2 = (3.0 * step.y_end - 2.0 * xe * tan_th) / xe**2
    a3 = (xe * tan_th - 2.0 * step.y_end) / xe**3
    return CubicCurve(0.0, tan_th, a2, a3)


def eval_curve(curve: CubicCurve, x) -> float | np.ndarray:
    """y(x); accepts scalars or arrays."""
    x = np.asarray(x, dtype=float)
    y = curve.a0 + x * (curve.a1 + x * (curve.a2 + x * curve.a3))
    return float(y) if y.ndim == 0 else y


def eval_slope(curve: CubicCurve, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    dy = curve.a1 + x * (2.0 * curve.a2 + 3.0 * curve.a3 * x)
    return float(dy) if dy.ndim == 0 else dy


def eval_heading(curve: CubicCurve, x) -> float | np.ndarray:
    """Heading angle atan(dy/dx) at x [rad]."""
    h = np.arctan(eval_slope(curve, np.asarray(x, dtype=float)))
    return float(h) if h.ndim == 0 else h


def eval_curvature(curve: CubicCurve, x) -> float | np.ndarray:
    """Signed curvature y'' / (1 + y'^2)^(3/2) at x [1/m]."""
    x = np.asarray(x, dtype=float)
    d1 = curve.a1 + x * (2.0 * curve.a2 + 3.0 * curve.a3 * x)
    d2 = 2.0 * curve.a2 + 6.0 * curve.a3 * x
    k = d2 / (1.0 + d1**2) ** 1.5
    return float(k) if k.ndim == 0 else k


def sample_trajectory(curve: CubicCurve, step: LaneChangeStep,
                      v_long: float, dt: float) -> Trajectory:
    """Time-parameterize the curve at constant longitudinal speed.

    Samples sit at x_k = k*v_long*dt, capped at x_end, for
    k = 1 .. ceil(x_end / (v_long*dt)); the final sample lands exactly on
    x_end. Speed is reported along the path (v_long / cos(heading)).
    """
    if v_long <= 0:
        raise ValueError(f"v_long must be > 0, got {v_long}")
    if dt <= 0:
        raise ValueError(f"dt must be > 0, got {dt}")
    step_x = v_long * dt
    n = int(math.ceil(step.x_end / step_x))
    k = np.arange(1, n + 1, dtype=float)
    xs = np.minimum(k * step_x, step.x_end)
    ys = eval_curve(curve, xs)
    headings = eval_heading(curve, xs)
    vs = v_long / np.cos(headings)
    return Trajectory(t=k * dt, x=xs, y=np.asarray(ys), v=vs,
                      heading=np.asarray(headings))


def check_comfort(curve: CubicCurve, step: LaneChangeStep, v_long: float,
                  a_lat_max: float = DEFAULT_LAT_ACCEL_MAX,
                  n_samples: int = 1000) -> tuple[bool, float]:
    """Lateral-acceleration screen: peak of v_long^2 * |curvature|.

    Curvature is scanned on ``n_samples`` evenly spaced points covering
    [0, x_end] endpoints included. Returns (passed, peak_lat_accel).
    """
    xs = np.linspace(0.0, step.x_end, n_samples)
    peak = float(np.max(np.abs(eval_curvature(curve, xs)))) * v_long**2
    return peak <= a_lat_max, peak
