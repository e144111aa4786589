"""Deterministic fixed-step closed-loop world simulation.

Each tick: build a feature window per surrounding vehicle from the rolling
state history, forecast every obstacle over the control horizon, advance
the ego's lane-change phase machine (gap acceptance via the safe-distance
test, cubic reference refreshed every tick while changing), optimize one
control horizon, apply the first control, integrate the world, and log a
risk sample. Surrounding vehicles follow open-loop piecewise-constant
acceleration schedules and never react to the ego.

Scenario constants that the source material only describes qualitatively
(obstacle placements, speeds, braking magnitude) are frozen here as the
canonical fixtures the regression suite runs against.
"""

from __future__ import annotations

import csv
import json
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import planner
from .features import window_from_states
from .mpc import ControlInput, MpcConfig, MpcDiagnostics, ObstaclePrediction, \
    bicycle_step, plan_control
from .safety import GippsParams, RiskSample, lateral_overlap, rai, \
    is_lane_change_safe, safe_distance, scene_rai, gap as bumper_gap
from .vehicle import Trajectory, VehicleState, lane_center, nearest_lane

SIMLOG_SCHEMA = "simlog.v1"
SUMMARY_SCHEMA = 1
SIMLOG_COLUMNS = ("tick", "t", "vehicle_id", "kind", "lane", "x", "y", "v",
                  "a", "heading", "gap_to_ego", "d_safe", "rai", "accel_cmd",
                  "steer_cmd", "collision", "phase")

PHASE_CRUISE = "cruise"
PHASE_AWAIT = "await_gap"
PHASE_CHANGING = "changing"
PHASE_DONE = "done"


@dataclass
class ScriptedVehicle:
    """Open-loop vehicle: initial state plus (t_until, accel) segments."""

    state: VehicleState
    schedule: list[tuple[float, float]]

    def accel_at(self, t: float) -> float:
        for t_until, a in self.schedule:
            if t < t_until - 1e-9:
                return a
        return self.schedule[-1][1]


@dataclass
class EgoGoal:
    target_lane: int
    cruise_speed: float
    command_time: float = 0.0
    change_extent: float = 70.0


@dataclass
class ScenarioSpec:
    name: str
    lane_count: int
    lane_width: float
    duration: float
    dt: float
    ego: VehicleState
    goal: EgoGoal
    scripted: list[ScriptedVehicle]


class ScenarioError(ValueError):
    pass


def validate_spec(spec: ScenarioSpec) -> None:
    if spec.dt <= 0:
        raise ScenarioError("dt must be > 0")
    if spec.lane_count < 2:
        raise ScenarioError("need at least 2 lanes")
    if spec.duration <= 0:
        raise ScenarioError("duration must be > 0")
    if not (1 <= spec.ego.lane <= spec.lane_count):
        raise ScenarioError("ego lane outside the road")
    if not (1 <= spec.goal.target_lane <= spec.lane_count):
        raise ScenarioError("target lane outside the road")
    for sv in spec.scripted:
        if not sv.schedule:
            raise ScenarioError(f"vehicle {sv.state.id}: empty schedule")
        t_prev = 0.0
        for t_until, _ in sv.schedule:
            if t_until <= t_prev:
                raise ScenarioError(
                    f"vehicle {sv.state.id}: schedule breakpoints must increase")
            t_prev = t_until
        if t_prev < spec.duration - 1e-9:
            raise ScenarioError(
                f"vehicle {sv.state.id}: schedule ends at {t_prev} s, "
                f"before duration {spec.duration} s")
    ids = [spec.ego.id] + [sv.state.id for sv in spec.scripted]
    if len(set(ids)) != len(ids):
        raise ScenarioError("duplicate vehicle ids")


def detect_collision(states: list[VehicleState]) -> bool:
    """True when any two bodies strictly overlap both length- and width-wise."""
    for i in range(len(states)):
        for j in range(i + 1, len(states)):
            a, b = states[i], states[j]
            long_overlap = min(a.x, b.x) - max(a.x - a.length, b.x - b.length)
            if long_overlap > 0 and lateral_overlap(a, b) > 0:
                return True
    return False


def step(states: list[VehicleState], scripted: list[ScriptedVehicle],
         ego_control: ControlInput, t: float, dt: float, lane_width: float,
         lane_count: int, wheelbase: float) -> list[VehicleState]:
    """Advance the world by dt: ego first, then the scripted vehicles.

    Positions move with the pre-update speeds (explicit Euler) and speeds
    are floored at zero; the scripted vehicles read their schedules only.
    """
    ego = states[0]
    x, y, psi, v = bicycle_step(ego.x, ego.y, ego.heading, ego.v,
                                ego_control.accel, ego_control.steer, dt,
                                wheelbase)
    new_states = [ego.copy(x=float(x), y=float(y), heading=float(psi),
                           v=float(v), a=ego_control.accel,
                           lane=nearest_lane(float(y), lane_width, lane_count))]
    for state, sv in zip(states[1:], scripted):
        a = sv.accel_at(t)
        nx = state.x + state.v * dt
        nv = max(0.0, state.v + a * dt)
        new_states.append(state.copy(x=nx, v=nv, a=sv.accel_at(t + dt)))
    return new_states


@dataclass
class TickRecord:
    tick: int
    t: float
    states: list[VehicleState]
    control: ControlInput
    risk: RiskSample
    collision: bool
    phase: str
    predictions: dict[int, np.ndarray]
    diagnostics: MpcDiagnostics | None


@dataclass
class SimLog:
    scenario: str
    predictor_name: str
    seed: int
    dt: float
    duration: float
    gipps: GippsParams = field(default_factory=GippsParams)
    ticks: list[TickRecord] = field(default_factory=list)
    collision: bool = False
    completion_time: float | None = None
    fitted_curves: list[tuple[int, planner.CubicCurve, planner.LaneChangeStep,
                              float]] = field(default_factory=list)


def _prefill_history(state: VehicleState, n: int, dt: float,
                     lane_width: float, lane_count: int) -> list[VehicleState]:
    """Backcast n earlier states assuming straight constant-speed motion."""
    out = []
    vx = state.v * math.cos(state.heading)
    vy = state.v * math.sin(state.heading)
    for k in range(n, 0, -1):
        y = state.y - vy * k * dt
        out.append(state.copy(x=state.x - vx * k * dt, y=y, a=0.0,
                              lane=nearest_lane(y, lane_width, lane_count)))
    return out


def _reference(ego: VehicleState, phase: str, goal: EgoGoal, spec: ScenarioSpec,
               cfg: MpcConfig, curve: planner.CubicCurve | None,
               remaining: float) -> Trajectory:
    n = cfg.horizon
    k = np.arange(n + 1, dtype=float)
    if phase == PHASE_CHANGING and curve is not None:
        v_long = max(ego.v * math.cos(ego.heading), 1.0)
        xs_local = k * v_long * cfg.dt
        target_y = lane_center(goal.target_lane, spec.lane_width)
        ys = np.where(xs_local <= remaining,
                      ego.y + planner.eval_curve(curve, np.minimum(xs_local, remaining)),
                      target_y)
        heads = np.where(xs_local <= remaining,
                         planner.eval_heading(curve, np.minimum(xs_local, remaining)),
                         0.0)
        return Trajectory(t=k * cfg.dt, x=ego.x + xs_local, y=ys,
                          v=np.full(n + 1, goal.cruise_speed), heading=heads)
    if phase == PHASE_DONE or phase == PHASE_AWAIT:
        center = lane_center(ego.lane if phase == PHASE_AWAIT else goal.target_lane,
                             spec.lane_width)
    else:
        center = lane_center(ego.lane, spec.lane_width)
    return Trajectory(t=k * cfg.dt, x=ego.x + k * goal.cruise_speed * cfg.dt,
                      y=np.full(n + 1, center),
                      v=np.full(n + 1, goal.cruise_speed),
                      heading=np.zeros(n + 1))


def _target_lane_pair(ego: VehicleState, others: list[VehicleState],
                      target_lane: int):
    """Nearest leader/follower currently occupying the target lane."""
    leader = follower = None
    for o in others:
        if o.lane != target_lane:
            continue
        if o.x >= ego.x:
            if leader is None or o.x < leader.x:
                leader = o
        else:
            if follower is None or o.x > follower.x:
                follower = o
    return leader, follower


def default_gipps(spec: ScenarioSpec) -> GippsParams:
    """Body-length margin sized to the longest vehicle in the scene."""
    longest = max([spec.ego.length] + [sv.state.length for sv in spec.scripted])
    return GippsParams(body_length=longest)


def run_scenario(spec: ScenarioSpec, predictor, gipps: GippsParams,
                 cfg: MpcConfig, seed: int = 0,
                 predictor_name: str = "") -> SimLog:
    """Closed-loop run; halts early (flag set) if any bodies ever overlap.

    ``predictor`` must expose predict(window, horizon) -> (horizon, 3); the
    same seed, spec and predictor give a bit-identical log. Obstacle windows
    are evaluated in ascending vehicle-id order.
    """
    validate_spec(spec)
    if abs(spec.dt - cfg.dt) > 1e-12:
        raise ScenarioError("controller dt must match scenario dt")
    n_ticks = int(round(spec.duration / spec.dt))
    hist_len = max(int(getattr(predictor, "history_len", 2)), 2)

    states = [spec.ego.copy()] + [sv.state.copy() for sv in spec.scripted]
    order = sorted(range(1, len(states)), key=lambda i: states[i].id)
    history: dict[int, deque] = {}
    for st in states:
        history[st.id] = deque(
            _prefill_history(st, hist_len - 1, spec.dt, spec.lane_width,
                             spec.lane_count), maxlen=hist_len)

    log = SimLog(scenario=spec.name, predictor_name=predictor_name,
                 seed=seed, dt=spec.dt, duration=spec.duration, gipps=gipps)
    phase = PHASE_CRUISE
    change_end_x = None
    changing_curve = None

    for tick in range(n_ticks):
        t = tick * spec.dt
        ego, others = states[0], states[1:]
        for st in states:
            history[st.id].append(st)

        risk = scene_rai(ego, others, gipps, t=t)
        collided = detect_collision(states)
        if collided:
            log.collision = True

        predictions: dict[int, np.ndarray] = {}
        obstacle_preds: list[ObstaclePrediction] = []
        for i in order:
            target = states[i]
            frames = []
            snapshots = {vid: list(history[vid]) for vid in history}
            for k in range(hist_len):
                frames.append((snapshots[target.id][k],
                               [snapshots[st.id][k] for st in states
                                if st.id != target.id]))
            window = window_from_states(frames, spec.dt, spec.lane_width,
                                        spec.lane_count)
            pred = predictor.predict(window, cfg.horizon)
            predictions[target.id] = pred
            obstacle_preds.append(ObstaclePrediction(
                traj=pred, length=target.length, width=target.width))

        wants_change = spec.goal.target_lane != spec.ego.lane
        if phase == PHASE_CRUISE and wants_change and t >= spec.goal.command_time:
            phase = PHASE_AWAIT
        if phase == PHASE_AWAIT:
            leader, follower = _target_lane_pair(ego, others,
                                                 spec.goal.target_lane)
            safe, _ = is_lane_change_safe(ego, leader, follower, gipps)
            if safe:
                phase = PHASE_CHANGING
                change_end_x = ego.x + spec.goal.change_extent
        remaining = (change_end_x - ego.x) if change_end_x is not None else 0.0
        if phase == PHASE_CHANGING:
            target_y = lane_center(spec.goal.target_lane, spec.lane_width)
            y_err = target_y - ego.y
            if abs(y_err) < 0.25 and abs(ego.heading) < 0.02:
                phase = PHASE_DONE
                log.completion_time = t
                changing_curve = None
            else:
                # floor the replanned extent so late residual corrections
                # never get squeezed into a high-curvature stub, and keep
                # stretching it until the refreshed curve rides under the
                # lateral-comfort bound at the current speed
                v_plan = max(ego.v, 1.0)
                extent = max(remaining, v_plan * 1.5)
                theta = float(np.clip(ego.heading, -1.2, 1.2))
                for _ in range(4):
                    lc_step = planner.LaneChangeStep(theta_i=theta,
                                                     x_end=extent, y_end=y_err)
                    changing_curve = planner.fit_cubic(lc_step)
                    if planner.check_comfort(changing_curve, lc_step, v_plan)[0]:
                        break
                    extent *= 1.3
                log.fitted_curves.append((tick, changing_curve, lc_step,
                                          v_plan))
                remaining = extent

        reference = _reference(ego, phase, spec.goal, spec, cfg,
                               changing_curve, remaining)
        controls, diag = plan_control(ego, reference, obstacle_preds, gipps,
                                      cfg, seed=[seed, tick])
        control = controls[0]

        log.ticks.append(TickRecord(
            tick=tick, t=t, states=[st.copy() for st in states],
            control=control, risk=risk, collision=log.collision, phase=phase,
            predictions=predictions, diagnostics=diag))
        if log.collision:
            break

        states = step(states, spec.scripted, control, t, spec.dt,
                      spec.lane_width, spec.lane_count, cfg.wheelbase)
    return log


# ---------------------------------------------------------------------------
# Built-in scenarios (frozen fixture constants)
# ---------------------------------------------------------------------------

def scenario_active_lane_change() -> ScenarioSpec:
    """Ego cruising in lane 2 must merge into lane 3 between three cars.

    The side car starts abreast slightly slower, so the follower gap opens
    over time; it then surges while the ego is crossing, which punishes
    prediction that ignores observed acceleration. The lead car eases off
    late in the run; the trailing car just follows.
    """
    width = 3.5
    duration = 20.0
    ego = VehicleState(id=0, x=0.0, y=lane_center(2, width), v=20.0, a=0.0,
                       heading=0.0, lane=2, length=5.0, width=1.8, kind="car")
    lane3 = lane_center(3, width)
    scripted = [
        ScriptedVehicle(
            state=VehicleState(id=1, x=50.0, y=lane3, v=21.0, a=0.0,
                               heading=0.0, lane=3, length=5.0, width=1.8,
                               kind="car"),
            schedule=[(duration, 0.0)]),
        ScriptedVehicle(
            state=VehicleState(id=2, x=0.0, y=lane3, v=18.0, a=0.0,
                               heading=0.0, lane=3, length=5.0, width=1.8,
                               kind="car"),
            schedule=[(10.0, 0.0), (13.0, 1.0), (duration, 0.0)]),
        ScriptedVehicle(
            state=VehicleState(id=3, x=-45.0, y=lane3, v=19.0, a=0.0,
                               heading=0.0, lane=3, length=5.0, width=1.8,
                               kind="car"),
            schedule=[(duration, 0.0)]),
    ]
    return ScenarioSpec(name="lane-change", lane_count=3, lane_width=width,
                        duration=duration, dt=0.1, ego=ego,
                        goal=EgoGoal(target_lane=3, cruise_speed=20.0,
                                     command_time=2.0, change_extent=70.0),
                        scripted=scripted)


def scenario_emergency_braking() -> ScenarioSpec:
    """Ego car following a truck that brakes hard at t = 15 s until stopped."""
    width = 3.5
    duration = 30.0
    ego = VehicleState(id=0, x=0.0, y=0.0, v=20.0, a=0.0, heading=0.0,
                       lane=1, length=5.0, width=1.8, kind="car")
    truck = ScriptedVehicle(
        state=VehicleState(id=1, x=52.0, y=0.0, v=20.0, a=0.0, heading=0.0,
                           lane=1, length=12.0, width=2.4, kind="truck"),
        schedule=[(15.0, 0.0), (duration, -4.0)])
    return ScenarioSpec(name="emergency-brake", lane_count=2, lane_width=width,
                        duration=duration, dt=0.1, ego=ego,
                        goal=EgoGoal(target_lane=1, cruise_speed=20.0),
                        scripted=[truck])


SCENARIOS = {
    "lane-change": scenario_active_lane_change,
    "emergency-brake": scenario_emergency_braking,
}


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return repr(float(x))


def write_simlog_csv(log: SimLog, path) -> None:
    """One row per vehicle per tick; the first line tags the schema version.

    The ego row reports the scene-critical risk sample and the applied
    control; every obstacle row reports its own bumper gap toward the ego,
    the matching safe distance, and the laterally gated pairwise risk.
    """
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SIMLOG_SCHEMA}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SIMLOG_COLUMNS)
        for rec in log.ticks:
            ego = rec.states[0]
            for st in rec.states:
                if st.id == ego.id:
                    g, d, r = rec.risk.gap, rec.risk.d_safe, rec.risk.rai
                    acc, steer = rec.control.accel, rec.control.steer
                else:
                    if st.x >= ego.x:
                        g = bumper_gap(ego, st)
                        d = safe_distance(ego.v, st.v, log.gipps)
                    else:
                        g = bumper_gap(st, ego)
                        d = safe_distance(st.v, ego.v, log.gipps)
                    relevant = lateral_overlap(ego, st) > 0.5 * ego.width
                    r = rai(g, d) if relevant else 0.0
                    acc, steer = 0.0, 0.0
                writer.writerow([
                    rec.tick, _fmt(rec.t), st.id, st.kind, st.lane,
                    _fmt(st.x), _fmt(st.y), _fmt(st.v), _fmt(st.a),
                    _fmt(st.heading), _fmt(g), _fmt(d), _fmt(r),
                    _fmt(acc), _fmt(steer), int(rec.collision), rec.phase])


def read_simlog_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        first = fh.readline().strip()
        if first != f"# schema={SIMLOG_SCHEMA}":
            raise ValueError(f"{path}: unknown log schema line {first!r}")
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames) != SIMLOG_COLUMNS:
            raise ValueError(f"{path}: unexpected columns {reader.fieldnames}")
        rows = []
        for row in reader:
            parsed = dict(row)
            for key in ("t", "x", "y", "v", "a", "heading", "gap_to_ego",
                        "d_safe", "rai", "accel_cmd", "steer_cmd"):
                parsed[key] = float(row[key])
            for key in ("tick", "vehicle_id", "lane", "collision"):
                parsed[key] = int(row[key])
            rows.append(parsed)
        return rows


def summarize(log: SimLog) -> dict:
    """Scalar metrics of one run, JSON-ready."""
    rais = [rec.risk.rai for rec in log.ticks]
    gaps = [rec.risk.gap for rec in log.ticks if math.isfinite(rec.risk.gap)]
    decels = [max(0.0, -rec.control.accel) for rec in log.ticks]
    final = log.ticks[-1].states[0] if log.ticks else None
    return {
        "schema_version": SUMMARY_SCHEMA,
        "scenario": log.scenario,
        "predictor": log.predictor_name,
        "seed": log.seed,
        "dt": log.dt,
        "duration": log.duration,
        "ticks": len(log.ticks),
        "collision": bool(log.collision),
        "min_gap": min(gaps) if gaps else None,
        "peak_rai": max(rais) if rais else 0.0,
        "mean_rai": float(np.mean(rais)) if rais else 0.0,
        "peak_abs_decel": max(decels) if decels else 0.0,
        "completion_time": log.completion_time,
        "final_lane": final.lane if final else None,
        "final_speed": final.v if final else None,
        "fallback_count": sum(1 for rec in log.ticks
                              if rec.diagnostics and rec.diagnostics.fallback),
    }


def write_summary(log: SimLog, path) -> None:
    with open(path, "w") as fh:
        json.dump(summarize(log), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_summary(path) -> dict:
    with open(path) as fh:
        summary = json.load(fh)
    if summary.get("schema_version") != SUMMARY_SCHEMA:
        raise ValueError(f"{path}: unsupported summary schema "
                         f"{summary.get('schema_version')}")
    return summary
