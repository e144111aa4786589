"""Finite-horizon predictive controller over a kinematic bicycle model.

The plant is the standard kinematic bicycle with explicit Euler stepping:

    x   += v * cos(psi) * dt
    y   += v * sin(psi) * dt
    psi += (v / wheelbase) * tan(steer) * dt
    v   += accel * dt            (floored at 0; no reverse)

The stage cost is a weighted sum of squared tracking errors against the
reference (lateral, heading, speed), squared control effort, and a squared
safety slack per predicted obstacle, where slack is the shortfall of the
predicted bumper gap against the reaction-plus-braking safe distance. The
slack weight dominates the tracking weights so predicted violations steer
the solution before comfort does.

The optimizer is a deterministic multi-start pattern search: controls are
piecewise constant over short blocks, each start is refined by fixed-count
best-coordinate moves with step halving, and the best (cost, start index)
candidate wins. If even the winner's predicted slack exceeds the fallback
threshold, full braking with zero steering is returned instead and flagged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .safety import GippsParams, safe_distance
from .vehicle import Trajectory, VehicleState


@dataclass
class MpcConfig:
    horizon: int = 30
    dt: float = 0.1
    wheelbase: float = 2.8
    # tracking weights; lateral is heavy so the optimizer never trades the
    # reference lane away to dodge a predicted gap violation
    w_lateral: float = 25.0
    w_heading: float = 8.0
    w_speed: float = 0.3
    # effort/comfort weights; lateral acceleration v^2*tan(steer)/wheelbase
    # is penalized directly
    w_accel: float = 0.08
    w_steer: float = 50.0
    w_lat_accel: float = 1.0
    # safety slack weight; must dominate the tracking weights
    w_slack: float = 400.0
    # bounds
    a_min: float = -6.0
    a_max: float = 3.0
    steer_min: float = -0.05
    steer_max: float = 0.05
    # gap constraints stay active until the bodies clear laterally by this
    # margin, so the optimizer can never "thread" a predicted obstacle
    lateral_margin: float = 0.5
    # hard corridor around the reference path: lane changes happen only by
    # moving the reference, never by the optimizer fleeing a predicted gap
    # violation sideways
    max_lateral_dev: float = 1.2
    # optimizer budget
    opt_block: int = 6
    opt_iters: int = 30
    step_accel: float = 1.0
    step_steer: float = 0.01
    n_jitter_starts: int = 2
    # the braking fallback engages when the LEADER-side gap deficit exceeds
    # this fraction of the required safe distance (scale-free: 8 m short of
    # a 50 m requirement is caution, 8 m short of 10 m is an emergency);
    # rear-side deficits never trigger it, since braking in front of a
    # closing follower would make that deficit worse, not better
    fallback_deficit: float = 0.6

    def __post_init__(self):
        if self.horizon < 1 or self.dt <= 0:
            raise ValueError("horizon must be >= 1 and dt > 0")
        if not (self.a_min < 0 < self.a_max):
            raise ValueError("need a_min < 0 < a_max")
        if self.steer_min >= self.steer_max:
            raise ValueError("need steer_min < steer_max")
        if self.w_slack <= max(self.w_lateral, self.w_heading, self.w_speed):
            raise ValueError("slack weight must dominate tracking weights")


@dataclass(frozen=True)
class ControlInput:
    accel: float
    steer: float


@dataclass(frozen=True)
class ObstaclePrediction:
    """Predicted (x, y, v) track of one obstacle plus its footprint."""

    traj: np.ndarray          # (K, 3) with K >= horizon
    length: float
    width: float


@dataclass
class MpcDiagnostics:
    cost: float
    warm_start_costs: list[float] = field(default_factory=list)
    chosen_start: int = -1
    peak_slack: float = 0.0
    slack_active: bool = False
    fallback: bool = False


def bicycle_step(x, y, psi, v, accel, steer, dt, wheelbase):
    """One Euler step; works on scalars and on aligned arrays."""
    x = x + v * np.cos(psi) * dt
    y = y + v * np.sin(psi) * dt
    psi = psi + (v / wheelbase) * np.tan(steer) * dt
    v = np.maximum(0.0, v + accel * dt)
    return x, y, psi, v


def rollout(state: VehicleState, controls, dt: float,
            wheelbase: float) -> Trajectory:
    """Integrate a control sequence; returns N+1 samples incl. the start."""
    n = len(controls)
    t = np.arange(n + 1) * dt
    xs = np.empty(n + 1)
    ys = np.empty(n + 1)
    psis = np.empty(n + 1)
    vs = np.empty(n + 1)
    xs[0], ys[0], psis[0], vs[0] = state.x, state.y, state.heading, state.v
    for k, u in enumerate(controls):
        xs[k + 1], ys[k + 1], psis[k + 1], vs[k + 1] = bicycle_step(
            xs[k], ys[k], psis[k], vs[k], u.accel, u.steer, dt, wheelbase)
    return Trajectory(t=t, x=xs, y=ys, v=vs, heading=psis)


def _rollout_batch(state: VehicleState, controls: np.ndarray, cfg: MpcConfig):
    """controls: (M, N, 2) -> stacked (M, N+1) state arrays."""
    m, n, _ = controls.shape
    xs = np.empty((m, n + 1))
    ys = np.empty((m, n + 1))
    psis = np.empty((m, n + 1))
    vs = np.empty((m, n + 1))
    xs[:, 0] = state.x
    ys[:, 0] = state.y
    psis[:, 0] = state.heading
    vs[:, 0] = state.v
    for k in range(n):
        xs[:, k + 1], ys[:, k + 1], psis[:, k + 1], vs[:, k + 1] = bicycle_step(
            xs[:, k], ys[:, k], psis[:, k], vs[:, k],
            controls[:, k, 0], controls[:, k, 1], cfg.dt, cfg.wheelbase)
    return xs, ys, psis, vs


def _batch_cost(state: VehicleState, controls: np.ndarray, ref: Trajectory,
                obstacles: list[ObstaclePrediction], gipps: GippsParams,
                cfg: MpcConfig):
    """Total cost and peak predicted slack for each candidate row."""
    n = cfg.horizon
    xs, ys, psis, vs = _rollout_batch(state, controls, cfg)
    ey = ys[:, 1:] - ref.y[1:n + 1]
    epsi = psis[:, 1:] - ref.heading[1:n + 1]
    ev = vs[:, 1:] - ref.v[1:n + 1]
    cost = (cfg.w_lateral * ey**2 + cfg.w_heading * epsi**2
            + cfg.w_speed * ev**2).sum(axis=1)
    cost += (cfg.w_accel * controls[:, :, 0]**2
             + cfg.w_steer * controls[:, :, 1]**2).sum(axis=1)
    lat_accel = vs[:, :-1]**2 * np.tan(controls[:, :, 1]) / cfg.wheelbase
    cost += cfg.w_lat_accel * (lat_accel**2).sum(axis=1)
    corridor = np.maximum(0.0, np.abs(ey) - cfg.max_lateral_dev)
    cost += 1e6 * (corridor**2).sum(axis=1)
    peak_slack = np.zeros(controls.shape[0])
    peak_front_deficit = np.zeros(controls.shape[0])
    for ob in obstacles:
        ox = ob.traj[:n, 0]
        oy = ob.traj[:n, 1]
        ov = np.maximum(ob.traj[:n, 2], 0.0)
        ahead = ox >= xs[:, 1:]
        gap_ahead = (ox - ob.length) - xs[:, 1:]
        gap_behind = (xs[:, 1:] - state.length) - ox
        d_ahead = safe_distance(vs[:, 1:], ov[None, :], gipps)
        d_behind = safe_distance(ov[None, :], vs[:, 1:], gipps)
        gap_k = np.where(ahead, gap_ahead, gap_behind)
        d_safe = np.where(ahead, d_ahead, d_behind)
        overlap = (state.width + ob.width) / 2.0 - np.abs(ys[:, 1:] - oy)
        gate = overlap > -cfg.lateral_margin
        slack = np.where(gate, np.maximum(0.0, d_safe - gap_k), 0.0)
        cost += cfg.w_slack * (slack**2).sum(axis=1)
        peak_slack = np.maximum(peak_slack, slack.max(axis=1))
        front_deficit = np.where(ahead, slack / d_safe, 0.0)
        peak_front_deficit = np.maximum(peak_front_deficit,
                                        front_deficit.max(axis=1))
    return cost, peak_slack, peak_front_deficit


def _expand_blocks(blocks: np.ndarray, n: int) -> np.ndarray:
    """(M, B, 2) block controls -> (M, N, 2) per-step controls."""
    m, b, _ = blocks.shape
    reps = int(math.ceil(n / b))
    full = np.repeat(blocks, reps, axis=1)[:, :n, :]
    return full


def _clip_controls(u: np.ndarray, cfg: MpcConfig) -> np.ndarray:
    u = u.copy()
    u[..., 0] = np.clip(u[..., 0], cfg.a_min, cfg.a_max)
    u[..., 1] = np.clip(u[..., 1], cfg.steer_min, cfg.steer_max)
    return u


def _tracking_warm_start(state: VehicleState, ref: Trajectory,
                         cfg: MpcConfig) -> np.ndarray:
    """Greedy feedback rollout toward the reference; (N, 2) controls."""
    n = cfg.horizon
    u = np.zeros((n, 2))
    x, y, psi, v = state.x, state.y, state.heading, state.v
    for k in range(n):
        ey = ref.y[k + 1] - y
        epsi = ref.heading[k + 1] - psi
        ev = ref.v[k + 1] - v
        accel = np.clip(ev / cfg.dt * 0.5, cfg.a_min, cfg.a_max)
        steer = np.clip(0.6 * epsi + 0.05 * ey, cfg.steer_min, cfg.steer_max)
        u[k] = (accel, steer)
        x, y, psi, v = bicycle_step(x, y, psi, v, accel, steer,
                                    cfg.dt, cfg.wheelbase)
    return u


def plan_control(state: VehicleState, reference: Trajectory,
                 obstacle_predictions: list[ObstaclePrediction],
                 gipps: GippsParams, cfg: MpcConfig,
                 seed: int = 0) -> tuple[list[ControlInput], MpcDiagnostics]:
    """Optimize one horizon of controls against the reference and predictions.

    The reference must supply at least horizon+1 samples at cfg.dt (index 0
    is the current instant); predictions must cover the horizon at the same
    rate. The returned cost never exceeds any warm start's cost. Identical
    inputs and seed give identical controls.
    """
    n = cfg.horizon
    if len(reference) < n + 1:
        raise ValueError(f"reference length {len(reference)} < horizon+1 {n + 1}")
    for ob in obstacle_predictions:
        if ob.traj.shape[0] < n:
            raise ValueError("obstacle prediction shorter than horizon")

    n_blocks = int(math.ceil(n / cfg.opt_block))
    rng = np.random.default_rng(seed)

    def to_blocks(u_full: np.ndarray) -> np.ndarray:
        pad = n_blocks * cfg.opt_block - n
        padded = np.concatenate([u_full, np.repeat(u_full[-1:], pad, axis=0)]) \
            if pad else u_full
        return padded.reshape(n_blocks, cfg.opt_block, 2).mean(axis=1)

    track = _tracking_warm_start(state, reference, cfg)
    starts = [
        np.zeros((n_blocks, 2)),                       # coast
        np.stack([np.full(n_blocks, cfg.a_min),       # brake
                  np.zeros(n_blocks)], axis=1),
        to_blocks(track),                              # reference following
    ]
    for _ in range(cfg.n_jitter_starts):
        jitter = rng.normal(0.0, 1.0, size=(n_blocks, 2)) \
            * np.array([0.3, 0.01])
        starts.append(to_blocks(track) + jitter)

    def cost_of(blocks_batch: np.ndarray):
        full = _clip_controls(_expand_blocks(blocks_batch, n), cfg)
        return _batch_cost(state, full, reference, obstacle_predictions,
                           gipps, cfg)[0]

    warm_costs = [float(cost_of(s[None])[0]) for s in starts]

    best_cost = math.inf
    best_blocks = None
    best_start = -1
    n_coords = n_blocks * 2
    for s_idx, start in enumerate(starts):
        current = start.copy()
        cur_cost = warm_costs[s_idx]
        step = np.array([cfg.step_accel, cfg.step_steer])
        for _ in range(cfg.opt_iters):
            cands = np.repeat(current[None], 2 * n_coords, axis=0)
            row = 0
            for b in range(n_blocks):
                for ch in range(2):
                    cands[row, b, ch] += step[ch]
                    cands[row + 1, b, ch] -= step[ch]
                    row += 2
            costs = cost_of(cands)
            j = int(np.argmin(costs))
            if costs[j] < cur_cost:
                current = cands[j]
                cur_cost = float(costs[j])
            else:
                step *= 0.5
        if cur_cost < best_cost:
            best_cost = cur_cost
            best_blocks = current
            best_start = s_idx

    full = _clip_controls(_expand_blocks(best_blocks[None], n), cfg)[0]
    _, peak, front_deficit = _batch_cost(state, full[None], reference,
                                         obstacle_predictions, gipps, cfg)
    peak_slack = float(peak[0])
    diag = MpcDiagnostics(cost=best_cost, warm_start_costs=warm_costs,
                          chosen_start=best_start, peak_slack=peak_slack,
                          slack_active=peak_slack > 0.0)
    if float(front_deficit[0]) > cfg.fallback_deficit:
        diag.fallback = True
        full = np.zeros((n, 2))
        full[:, 0] = cfg.a_min
    controls = [ControlInput(accel=float(a), steer=float(s)) for a, s in full]
    return controls, diag
