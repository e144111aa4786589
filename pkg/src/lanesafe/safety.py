"""Minimum safe following distance and the per-tick risk index.

The safe distance is the classic reaction-plus-braking gap, extended with a
body-length margin: the follower must cover its reaction-time travel plus
the difference of the two emergency stopping distances, and still keep one
body length of clearance. With v_r/v_f the rear/front speeds:

    d_safe = max(L, v_r*tau + v_r^2/(2*b_rear) - v_f^2/(2*b_front) + L)

The floor at L keeps the requirement sensible when the leader is much
faster than the follower.

The risk index maps an actual bumper-to-bumper gap against the required
safe distance into [0, 1]: 0 when the gap meets the requirement, 1 at (or
past) contact, linear in between. Lower is safer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .vehicle import VehicleState


@dataclass(frozen=True)
class GippsParams:
    """Reaction time, braking limits and body-length margin."""

    tau: float = 1.0        # rear-driver reaction time [s]
    b_rear: float = 4.0     # rear vehicle max braking [m/s^2], > 0
    b_front: float = 4.0    # front vehicle max braking [m/s^2], > 0
    body_length: float = 5.0  # margin L [m], >= 0

    def __post_init__(self):
        if self.tau <= 0 or self.b_rear <= 0 or self.b_front <= 0:
            raise ValueError("tau, b_rear, b_front must all be > 0")
        if self.body_length < 0:
            raise ValueError("body_length must be >= 0")
        for name in ("tau", "b_rear", "b_front", "body_length"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"non-finite parameter {name}")


@dataclass(frozen=True)
class RiskSample:
    """One timestamped risk evaluation: the critical gap and its index."""

    t: float
    gap: float
    d_safe: float
    rai: float


def safe_distance(v_rear, v_front, p: GippsParams):
    """Minimum safe bumper-to-bumper gap [m]; accepts scalars or arrays."""
    v_rear = np.asarray(v_rear, dtype=float)
    v_front = np.asarray(v_front, dtype=float)
    if np.any(v_rear < 0) or np.any(v_front < 0):
        raise ValueError("speeds must be >= 0")
    raw = (v_rear * p.tau + v_rear**2 / (2.0 * p.b_rear)
           - v_front**2 / (2.0 * p.b_front) + p.body_length)
    d = np.maximum(p.body_length, raw)
    return float(d) if d.ndim == 0 else d


def gap(rear: VehicleState, front: VehicleState) -> float:
    """Bumper-to-bumper distance [m]; negative means the bodies overlap.

    Both ``x`` fields are front-bumper positions, so the clearance is the
    front vehicle's rear bumper minus the rear vehicle's front bumper.
    """
    return (front.x - front.length) - rear.x


def rai(gap_m: float, d_safe: float) -> float:
    """Risk index in [0, 1]: clamp((d_safe - gap) / d_safe, 0, 1)."""
    if d_safe <= 0:
        raise ValueError(f"d_safe must be > 0, got {d_safe}")
    return float(min(max((d_safe - gap_m) / d_safe, 0.0), 1.0))


def lateral_overlap(a: VehicleState, b: VehicleState) -> float:
    """Overlap of the two bodies' lateral extents [m]; <= 0 when disjoint."""
    return (a.width + b.width) / 2.0 - abs(a.y - b.y)


def _relevant(ego: VehicleState, other: VehicleState) -> bool:
    # Risk pairing requires more than half the ego's width of lateral overlap.
    return lateral_overlap(ego, other) > 0.5 * ego.width


def scene_rai(ego: VehicleState, others: list[VehicleState],
              p: GippsParams, t: float = 0.0) -> RiskSample:
    """Worst pairwise risk index of the ego against laterally relevant vehicles.

    The ego is scored as the rear vehicle against everything ahead of it and
    as the front vehicle against everything behind. With no relevant pair the
    sample reports rai=0 with an infinite gap.
    """
    worst = RiskSample(t=t, gap=math.inf, d_safe=0.0, rai=0.0)
    worst_margin = math.inf
    for other in others:
        if other.id == ego.id:
            raise ValueError("ego must not appear in others")
        if not _relevant(ego, other):
            continue
        if other.x >= ego.x:
            g = gap(ego, other)
            d = safe_distance(ego.v, other.v, p)
        else:
            g = gap(other, ego)
            d = safe_distance(other.v, ego.v, p)
        r = rai(g, d)
        # Keep the critical pair: highest index, ties broken by slimmest margin.
        if r > worst.rai or (r == worst.rai and g - d < worst_margin):
            worst = RiskSample(t=t, gap=g, d_safe=d, rai=r)
            worst_margin = g - d
    return worst


def is_lane_change_safe(ego: VehicleState,
                        target_leader: VehicleState | None,
                        target_follower: VehicleState | None,
                        p: GippsParams) -> tuple[bool, tuple[float, float]]:
    """Gap-acceptance test against the target lane's leader and follower.

    Safe iff the gap to the leader covers d_safe(ego.v, leader.v) and the
    follower's gap to the ego covers d_safe(follower.v, ego.v). A missing
    vehicle contributes an infinite margin. Returns (safe, (lead_margin,
    follow_margin)) with margins = gap - d_safe.
    """
    lead_margin = math.inf
    follow_margin = math.inf
    if target_leader is not None:
        lead_margin = gap(ego, target_leader) - safe_distance(ego.v, target_leader.v, p)
    if target_follower is not None:
        follow_margin = gap(target_follower, ego) - safe_distance(target_follower.v, ego.v, p)
    return (lead_margin >= 0 and follow_margin >= 0), (lead_margin, follow_margin)
