"""Per-frame interaction features and the sliding window fed to predictors.

Each frame of a window encodes the target vehicle plus its six closest
surrounding vehicles (leader and follower in the own, left and right lanes):

    index  feature
    0      lateral offset from the nearest lane center [m]
    1      longitudinal velocity v*cos(heading) [m/s]
    2      lateral velocity v*sin(heading) [m/s]
    3      longitudinal acceleration [m/s^2]
    4      heading [rad]
    5..16  six neighbor slots x (distance, relative speed)

Neighbor slots are ordered (lead, lag) x (own, left, right) lane. Distances
are nonnegative bumper-position differences measured toward the neighbor;
an empty slot is encoded as (200 m, 0). "Left" is the higher lane index.

Windows carry raw (world-unit) features; z-scoring happens inside each
trained model with statistics frozen at training time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .vehicle import VehicleState, lane_center, nearest_lane

EGO_FEATURES = 5
NEIGHBOR_SLOTS = 6        # (lead, lag) x (own, left, right)
FEATURE_DIM = EGO_FEATURES + 2 * NEIGHBOR_SLOTS
ABSENT_NEIGHBOR_DISTANCE = 200.0  # [m]

# slot -> lane offset relative to the target's lane
_SLOT_LANE_OFFSETS = (0, 0, +1, +1, -1, -1)
_SLOT_IS_LEAD = (True, False, True, False, True, False)


@dataclass(frozen=True)
class WindowAnchor:
    """World-frame state of the target at the last window frame."""

    x: float
    y: float
    vx: float
    vy: float
    a: float
    heading: float
    lane_width: float
    lane_count: int


@dataclass
class FeatureWindow:
    """A (T, FEATURE_DIM) history of raw features sampled every ``dt`` seconds."""

    history: np.ndarray
    dt: float
    anchor: WindowAnchor

    def __post_init__(self):
        self.history = np.asarray(self.history, dtype=float)
        if self.history.ndim != 2 or self.history.shape[0] < 1:
            raise ValueError(f"history must be (T>=1, D), got {self.history.shape}")
        if not np.all(np.isfinite(self.history)):
            raise ValueError("history contains non-finite values")
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")

    def __len__(self) -> int:
        return self.history.shape[0]


def feature_vector(target: VehicleState, others: list[VehicleState],
                   lane_width: float, lane_count: int) -> np.ndarray:
    """Raw feature row for one frame.

    Neighbor slots pick, per slot lane, the vehicle with the smallest
    longitudinal distance on the slot's side; a vehicle exactly abreast
    (same x) counts as a leader.
    """
    vec = np.empty(FEATURE_DIM, dtype=float)
    tgt_lane = nearest_lane(target.y, lane_width, lane_count)
    vec[0] = target.y - lane_center(tgt_lane, lane_width)
    vec[1] = target.v * np.cos(target.heading)
    vec[2] = target.v * np.sin(target.heading)
    vec[3] = target.a
    vec[4] = target.heading

    for slot in range(NEIGHBOR_SLOTS):
        slot_lane = tgt_lane + _SLOT_LANE_OFFSETS[slot]
        is_lead = _SLOT_IS_LEAD[slot]
        best_dist = ABSENT_NEIGHBOR_DISTANCE
        best_dv = 0.0
        if 1 <= slot_lane <= lane_count:
            for other in others:
                if other.id == target.id:
                    continue
                if nearest_lane(other.y, lane_width, lane_count) != slot_lane:
                    continue
                rel = other.x - target.x
                if is_lead and rel >= 0:
                    dist = rel
                elif not is_lead and rel < 0:
                    dist = -rel
                else:
                    continue
                if dist < best_dist:
                    best_dist = dist
                    best_dv = other.v - target.v
        vec[EGO_FEATURES + 2 * slot] = best_dist
        vec[EGO_FEATURES + 2 * slot + 1] = best_dv
    return vec


def window_from_states(frames: list[tuple[VehicleState, list[VehicleState]]],
                       dt: float, lane_width: float,
                       lane_count: int) -> FeatureWindow:
    """Build a window from (target, others) snapshots, oldest first.

    The anchor velocity is taken from the last positional step so that a
    constant-velocity extrapolation of the window is exact for straight-line
    motion. A single-frame window falls back to the state's own (v, heading).
    """
    if not frames:
        raise ValueError("empty window")
    rows = np.stack([feature_vector(tgt, oth, lane_width, lane_count)
                     for tgt, oth in frames])
    last = frames[-1][0]
    if len(frames) >= 2:
        prev = frames[-2][0]
        vx = (last.x - prev.x) / dt
        vy = (last.y - prev.y) / dt
    else:
        vx = last.v * np.cos(last.heading)
        vy = last.v * np.sin(last.heading)
    anchor = WindowAnchor(x=last.x, y=last.y, vx=float(vx), vy=float(vy),
                          a=last.a, heading=last.heading,
                          lane_width=lane_width, lane_count=lane_count)
    return FeatureWindow(history=rows, dt=dt, anchor=anchor)


@dataclass
class FeatureScaler:
    """Frozen z-score statistics; std entries are floored at 1e-8."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, rows: np.ndarray) -> "FeatureScaler":
        rows = np.asarray(rows, dtype=float).reshape(-1, rows.shape[-1])
        mean = rows.mean(axis=0)
        std = np.maximum(rows.std(axis=0), 1e-8)
        return cls(mean=mean, std=std)

    @classmethod
    def identity(cls, dim: int) -> "FeatureScaler":
        return cls(mean=np.zeros(dim), std=np.ones(dim))

    def transform(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=float) - self.mean) / self.std

    def inverse(self, rows: np.ndarray) -> np.ndarray:
        return np.asarray(rows, dtype=float) * self.std + self.mean
