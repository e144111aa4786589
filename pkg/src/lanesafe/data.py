"""Trajectory dataset ingestion, synthetic generation, windowing, metrics.

The on-disk trajectory format is an 8-column CSV with header

    vehicle_id,t,x,y,v,a,lane,length

one row per vehicle per frame, frames uniformly spaced in time. Synthetic
episodes are generated at desk scale: a maneuvering primary vehicle
(cruise / speed-adjust / lane-change or keep phases) plus optional
constant-speed neighbors, with Gaussian position noise. Users converting
richer recorded exports should map their columns onto this reduced schema
(local longitudinal position -> x, lateral -> y) and resample to a uniform
frame interval first.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import planner
from .features import FEATURE_DIM, FeatureWindow, WindowAnchor, feature_vector
from .vehicle import VehicleState, lane_center, nearest_lane

CSV_COLUMNS = ("vehicle_id", "t", "x", "y", "v", "a", "lane", "length")
LABELS = ("keep", "left", "right")

DEFAULT_DT = 0.1
DEFAULT_HISTORY = 20
DEFAULT_HORIZON = 50
DEFAULT_STRIDE = 5


@dataclass
class VehicleTrack:
    """One vehicle's uniformly sampled trajectory, sorted by time."""

    vehicle_id: int
    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    v: np.ndarray
    a: np.ndarray
    lane: np.ndarray
    length: float

    def __len__(self):
        return len(self.t)


@dataclass
class TrajectoryDataset:
    tracks: dict[int, VehicleTrack]
    dt: float
    lane_width: float = 3.5
    lane_count: int = 3

    def __len__(self):
        return len(self.tracks)


@dataclass
class EpisodeInfo:
    """Generator bookkeeping: the maneuver label and the vehicles involved."""

    label: str
    primary_id: int
    vehicle_ids: list[int]
    # lane-change geometry (None for keep episodes)
    change_extent: float | None = None
    change_start_x: float | None = None
    change_start_y: float | None = None


class DatasetError(ValueError):
    pass


def load_trajectories(path, lane_width: float = 3.5,
                      lane_count: int = 3) -> TrajectoryDataset:
    """Parse and validate the 8-column trajectory CSV.

    Rows may arrive in any order; they are sorted per vehicle by time. Any
    non-finite value or timing irregularity beyond 1e-6 s aborts with the
    offending CSV line number.
    """
    rows: dict[int, list[tuple]] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetError(f"{path}: empty file")
        if tuple(h.strip() for h in header) != CSV_COLUMNS:
            raise DatasetError(
                f"{path}: bad header {header}, expected {','.join(CSV_COLUMNS)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(CSV_COLUMNS):
                raise DatasetError(f"{path}:{lineno}: expected "
                                   f"{len(CSV_COLUMNS)} fields, got {len(row)}")
            try:
                vid = int(row[0])
                values = [float(v) for v in row[1:]]
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: unparsable value ({exc})") from exc
            if not all(math.isfinite(v) for v in values):
                raise DatasetError(f"{path}:{lineno}: non-finite value")
            rows.setdefault(vid, []).append(tuple(values))
    if not rows:
        raise DatasetError(f"{path}: no data rows")

    tracks: dict[int, VehicleTrack] = {}
    dt = None
    for vid in sorted(rows):
        recs = sorted(rows[vid], key=lambda r: r[0])
        arr = np.array(recs, dtype=float)
        ts = arr[:, 0]
        if len(ts) >= 2:
            steps = np.diff(ts)
            if dt is None:
                dt = float(steps[0])
            if np.any(np.abs(steps - dt) > 1e-6):
                raise DatasetError(
                    f"{path}: vehicle {vid} has non-uniform frame interval")
        tracks[vid] = VehicleTrack(
            vehicle_id=vid, t=ts, x=arr[:, 1], y=arr[:, 2], v=arr[:, 3],
            a=arr[:, 4], lane=arr[:, 5].astype(int), length=float(arr[0, 6]))
    if dt is None:
        dt = DEFAULT_DT
    return TrajectoryDataset(tracks=tracks, dt=dt, lane_width=lane_width,
                             lane_count=lane_count)


def save_trajectories(dataset: TrajectoryDataset, path) -> None:
    """Write the CSV form; floats use shortest round-trip formatting."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for vid in sorted(dataset.tracks):
            tr = dataset.tracks[vid]
            for k in range(len(tr)):
                writer.writerow([vid, repr(float(tr.t[k])), repr(float(tr.x[k])),
                                 repr(float(tr.y[k])), repr(float(tr.v[k])),
                                 repr(float(tr.a[k])), int(tr.lane[k]),
                                 repr(float(tr.length))])


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------

@dataclass
class SynthConfig:
    lane_width: float = 3.5
    lane_count: int = 3
    dt: float = DEFAULT_DT
    v_range: tuple[float, float] = (10.0, 25.0)
    accel_range: tuple[float, float] = (-4.0, 2.5)
    accel_prob: float = 0.7
    change_extent_range: tuple[float, float] = (50.0, 90.0)
    neighbor_prob: float = 0.6
    max_neighbors: int = 3
    min_frames: int = 150


def _piecewise_profile(rng, cfg: SynthConfig):
    """Speed/accel profile of one episode: list of (n_frames, accel)."""
    segs = [(int(rng.integers(25, 50)), 0.0)]
    if rng.random() < cfg.accel_prob:
        segs.append((int(rng.integers(15, 40)),
                     float(rng.uniform(*cfg.accel_range))))
        segs.append((int(rng.integers(15, 35)), 0.0))
    return segs


def synth_lane_change_dataset(seed: int, n_episodes: int, noise_std: float = 0.05,
                              cfg: SynthConfig | None = None
                              ) -> tuple[TrajectoryDataset, list[EpisodeInfo]]:
    """Deterministic synthetic corpus of cruise / lane-change episodes.

    Maneuver types are drawn uniformly from (keep, left, right). Lane-change
    lateral profiles come from the cubic planner at the episode's current
    speed; Gaussian noise of ``noise_std`` is added to both position
    coordinates (speed/accel columns keep their schedule values). Episodes
    occupy disjoint time ranges so frames never mix across episodes.
    """
    if n_episodes < 1:
        raise ValueError("n_episodes must be >= 1")
    cfg = cfg or SynthConfig()
    tracks: dict[int, VehicleTrack] = {}
    episodes: list[EpisodeInfo] = []
    next_id = 1
    frame_base = 0
    for ep in range(n_episodes):
        rng = np.random.default_rng([seed, ep])
        label = LABELS[int(rng.integers(3))]
        if label == "left":
            lane0 = int(rng.integers(1, cfg.lane_count))
        elif label == "right":
            lane0 = int(rng.integers(2, cfg.lane_count + 1))
        else:
            lane0 = int(rng.integers(1, cfg.lane_count + 1))

        v = float(rng.uniform(*cfg.v_range))
        x = float(rng.uniform(0.0, 50.0))
        y0 = lane_center(lane0, cfg.lane_width)

        xs, ys, vs, accs = [], [], [], []

        def run_segment(n_frames, accel, curve=None, curve_x0=0.0,
                        curve_extent=0.0):
            # Records frame k, then advances with explicit Euler (x moves
            # with the pre-update speed), matching the simulator convention.
            nonlocal x, v
            for _ in range(n_frames):
                if curve is not None:
                    local = min(max(x - curve_x0, 0.0), curve_extent)
                    ys.append(y0 + planner.eval_curve(curve, local))
                else:
                    ys.append(ys[-1] if ys else y0)
                xs.append(x)
                vs.append(v)
                accs.append(accel)
                x += v * cfg.dt
                v = max(0.0, v + accel * cfg.dt)

        # keep-lane episodes may brake all the way down; maneuver episodes
        # must retain enough speed to execute the change
        v_floor = 0.0 if label == "keep" else 5.0
        v_sim = v
        for n_frames, accel in _piecewise_profile(rng, cfg):
            if accel < 0 and v_floor > 0:
                n_frames = min(n_frames, max(
                    int((v_sim - v_floor) / (-accel * cfg.dt)), 0))
            run_segment(n_frames, accel)
            v_sim = max(v_floor, v_sim + accel * n_frames * cfg.dt)

        change_extent = change_start_x = change_start_y = None
        if label == "keep":
            run_segment(int(rng.integers(50, 80)), 0.0)
        else:
            extent = float(rng.uniform(*cfg.change_extent_range))
            sign = 1.0 if label == "left" else -1.0
            step = planner.LaneChangeStep(theta_i=0.0, x_end=extent,
                                          y_end=sign * cfg.lane_width)
            curve = planner.fit_cubic(step)
            n_frames = int(math.ceil(extent / (v * cfg.dt))) + 1
            change_extent, change_start_x, change_start_y = extent, x, y0
            run_segment(n_frames, 0.0, curve=curve, curve_x0=x,
                        curve_extent=extent)
            y0 = y0 + sign * cfg.lane_width

        tail = max(cfg.min_frames - len(xs), int(rng.integers(25, 45)))
        run_segment(tail, 0.0)

        n = len(xs)
        t = (frame_base + np.arange(n)) * cfg.dt
        noisy_x = np.asarray(xs) + rng.normal(0.0, noise_std, size=n)
        noisy_y = np.asarray(ys) + rng.normal(0.0, noise_std, size=n)
        lanes = np.array([nearest_lane(yy, cfg.lane_width, cfg.lane_count)
                          for yy in noisy_y])
        primary_id = next_id
        next_id += 1
        tracks[primary_id] = VehicleTrack(
            vehicle_id=primary_id, t=t, x=noisy_x, y=noisy_y,
            v=np.asarray(vs), a=np.asarray(accs), lane=lanes, length=5.0)
        vehicle_ids = [primary_id]

        if rng.random() < cfg.neighbor_prob:
            for _ in range(int(rng.integers(1, cfg.max_neighbors + 1))):
                n_lane = int(rng.integers(1, cfg.lane_count + 1))
                n_v = float(rng.uniform(*cfg.v_range))
                n_x0 = float(xs[0] + rng.uniform(-80.0, 80.0))
                n_x = n_x0 + np.arange(n) * n_v * cfg.dt \
                    + rng.normal(0.0, noise_std, size=n)
                n_y = np.full(n, lane_center(n_lane, cfg.lane_width)) \
                    + rng.normal(0.0, noise_std, size=n)
                tracks[next_id] = VehicleTrack(
                    vehicle_id=next_id, t=t, x=n_x, y=n_y,
                    v=np.full(n, n_v), a=np.zeros(n),
                    lane=np.array([nearest_lane(yy, cfg.lane_width, cfg.lane_count)
                                   for yy in n_y]),
                    length=5.0)
                vehicle_ids.append(next_id)
                next_id += 1

        episodes.append(EpisodeInfo(label=label, primary_id=primary_id,
                                    vehicle_ids=vehicle_ids,
                                    change_extent=change_extent,
                                    change_start_x=change_start_x,
                                    change_start_y=change_start_y))
        frame_base += n + 10
    dataset = TrajectoryDataset(tracks=tracks, dt=cfg.dt,
                                lane_width=cfg.lane_width,
                                lane_count=cfg.lane_count)
    return dataset, episodes


def split_episodes(episodes: list[EpisodeInfo], val_fraction: float,
                   seed: int) -> tuple[list[int], list[int]]:
    """80/20-style split by episode; returns (train_ids, val_ids) of vehicles."""
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(episodes))
    n_val = max(1, int(round(val_fraction * len(episodes))))
    val_eps = set(order[:n_val].tolist())
    train_ids, val_ids = [], []
    for idx, ep in enumerate(episodes):
        (val_ids if idx in val_eps else train_ids).extend(ep.vehicle_ids)
    return sorted(train_ids), sorted(val_ids)


# ---------------------------------------------------------------------------
# Windowing
# ---------------------------------------------------------------------------

@dataclass
class WindowedSample:
    """One training/evaluation sample cut from a track.

    ``window`` covers ``history_len`` frames; ``target`` holds the following
    ``horizon`` per-step (lateral, longitudinal) displacement deltas. The
    private ``seq_*`` arrays span history+horizon-1 frames for teacher-forced
    sequence training.
    """

    window: FeatureWindow
    target: np.ndarray
    label: str | None = None
    vehicle_id: int = -1
    seq_features: np.ndarray = field(default=None, repr=False)
    seq_targets: np.ndarray = field(default=None, repr=False)


def _state_at(tr: VehicleTrack, row: int, dt: float) -> VehicleState:
    if row >= 1:
        heading = math.atan2(tr.y[row] - tr.y[row - 1], tr.x[row] - tr.x[row - 1])
    else:
        heading = 0.0
    return VehicleState(id=tr.vehicle_id, x=float(tr.x[row]), y=float(tr.y[row]),
                        v=float(max(tr.v[row], 0.0)), a=float(tr.a[row]),
                        heading=heading, lane=int(tr.lane[row]),
                        length=tr.length)


def _state_cache(dataset: TrajectoryDataset):
    """States per track row, plus a frame-number index of present vehicles."""
    states: dict[int, list[VehicleState]] = {}
    frame_index: dict[int, list[tuple[int, int]]] = {}
    for vid in sorted(dataset.tracks):
        tr = dataset.tracks[vid]
        states[vid] = [_state_at(tr, row, dataset.dt) for row in range(len(tr))]
        for row, t in enumerate(tr.t):
            frame_index.setdefault(int(round(t / dataset.dt)), []).append((vid, row))
    return states, frame_index


def make_windows(dataset: TrajectoryDataset, history_len: int = DEFAULT_HISTORY,
                 horizon: int = DEFAULT_HORIZON, stride: int = DEFAULT_STRIDE,
                 vehicle_ids: list[int] | None = None) -> list[WindowedSample]:
    """Slice every track into overlapping windows with neighbor context.

    Windows start at offsets 0, stride, 2*stride, ... and need
    history_len + horizon frames, so a track of length T yields
    floor((T - history_len - horizon)/stride) + 1 windows (0 when short).
    The intention label compares the lane index at the last history frame
    with the lane index at the last target frame.
    """
    if history_len < 2 or horizon < 1 or stride < 1:
        raise ValueError("need history_len >= 2, horizon >= 1, stride >= 1")
    states, index = _state_cache(dataset)
    samples: list[WindowedSample] = []
    ids = vehicle_ids if vehicle_ids is not None else sorted(dataset.tracks)
    feat_cache: dict[tuple[int, int], np.ndarray] = {}

    def features_for(vid: int, row: int, frame_no: int) -> np.ndarray:
        key = (vid, row)
        if key not in feat_cache:
            others = [states[ovid][orow]
                      for ovid, orow in index.get(frame_no, ())
                      if ovid != vid]
            feat_cache[key] = feature_vector(states[vid][row], others,
                                             dataset.lane_width,
                                             dataset.lane_count)
        return feat_cache[key]

    for vid in ids:
        tr = dataset.tracks[vid]
        t_len = len(tr)
        span = history_len + horizon
        start = 0
        while start + span <= t_len:
            feats = np.stack([
                features_for(vid, row, int(round(tr.t[row] / dataset.dt)))
                for row in range(start, start + span)])
            hist_end = start + history_len - 1
            deltas_lat = np.diff(tr.y[start:start + span])
            deltas_lon = np.diff(tr.x[start:start + span])
            deltas = np.stack([deltas_lat, deltas_lon], axis=1)  # (span-1, 2)

            anchor = WindowAnchor(
                x=float(tr.x[hist_end]), y=float(tr.y[hist_end]),
                vx=float((tr.x[hist_end] - tr.x[hist_end - 1]) / dataset.dt),
                vy=float((tr.y[hist_end] - tr.y[hist_end - 1]) / dataset.dt),
                a=float(tr.a[hist_end]),
                heading=states[vid][hist_end].heading,
                lane_width=dataset.lane_width, lane_count=dataset.lane_count)
            window = FeatureWindow(history=feats[:history_len],
                                   dt=dataset.dt, anchor=anchor)
            lane_now = int(tr.lane[hist_end])
            lane_later = int(tr.lane[start + span - 1])
            if lane_later > lane_now:
                label = "left"
            elif lane_later < lane_now:
                label = "right"
            else:
                label = "keep"
            samples.append(WindowedSample(
                window=window,
                target=deltas[history_len - 1:],
                label=label,
                vehicle_id=vid,
                seq_features=feats[:span - 1],
                seq_targets=deltas))
            start += stride
    return samples


def target_positions(sample: WindowedSample) -> np.ndarray:
    """Ground-truth world (x, y) per future step, from the sample's deltas."""
    a = sample.window.anchor
    xy = np.cumsum(sample.target[:, ::-1], axis=0)  # (lon, lat) cumulative
    out = np.empty((len(sample.target), 2))
    out[:, 0] = a.x + xy[:, 0]
    out[:, 1] = a.y + xy[:, 1]
    return out


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

def metrics(predicted, truth) -> dict:
    """Displacement-error summary of predicted vs. true (x, y) sequences.

    Accepts one pair of (K, >=2) arrays or stacks of shape (n, K, >=2); only
    the first two columns (x, y) are scored. Returns average and final
    displacement error plus per-step RMSE, total and lateral-only.
    """
    pred = np.asarray(predicted, dtype=float)
    true = np.asarray(truth, dtype=float)
    if pred.ndim == 2:
        pred = pred[None, ...]
        true = true[None, ...]
    if pred.shape[:2] != true.shape[:2]:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    diff = pred[..., :2] - true[..., :2]
    dist = np.sqrt((diff**2).sum(axis=2))           # (n, K)
    return {
        "ade": float(dist.mean()),
        "fde": float(dist[:, -1].mean()),
        "rmse_by_horizon": np.sqrt((dist**2).mean(axis=0)),
        "lateral_rmse_by_horizon": np.sqrt((diff[:, :, 1]**2).mean(axis=0)),
    }
