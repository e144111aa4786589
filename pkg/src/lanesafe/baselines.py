"""Reference predictors the learned model is compared against.

Both expose the same interface as the recurrent predictor:
``predict(window, horizon_steps) -> (horizon_steps, 3)`` array of world-frame
(x, y, v) samples, one per future step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .features import FeatureScaler, FeatureWindow
from .lstm import TrainConfig, _AdamState, clip_gradient


@dataclass
class ConstantVelocityModel:
    """Straight-line extrapolation of the window's last velocity vector."""

    def predict(self, window: FeatureWindow, horizon_steps: int) -> np.ndarray:
        return predict_constant_velocity(window, horizon_steps)


def predict_constant_velocity(window: FeatureWindow,
                              horizon_steps: int) -> np.ndarray:
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    if len(window) < 1:
        raise ValueError("empty window")
    a = window.anchor
    k = np.arange(1, horizon_steps + 1, dtype=float)
    out = np.empty((horizon_steps, 3))
    out[:, 0] = a.x + k * a.vx * window.dt
    out[:, 1] = a.y + k * a.vy * window.dt
    out[:, 2] = math.hypot(a.vx, a.vy)
    return out


@dataclass
class FeedforwardModel:
    """Two-hidden-layer tanh network mapping a flat window to all horizon deltas.

    Weight shapes: w1 (hidden, T*D), w2 (hidden, hidden), w3 (horizon*2, hidden).
    The output is the whole horizon's (lateral, longitudinal) displacement
    deltas in one shot; there is no recurrence and no feedback loop.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def __post_init__(self):
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite values in {name}")
            setattr(self, name, arr)
        if self.w2.shape[1] != self.w1.shape[0] or self.w3.shape[1] != self.w2.shape[0]:
            raise ValueError("layer shapes are inconsistent")

    @property
    def input_size(self) -> int:
        return self.w1.shape[1]

    @property
    def horizon(self) -> int:
        return self.w3.shape[0] // 2

    def raw_forward(self, flat: np.ndarray) -> np.ndarray:
        """(B, T*D) -> (B, horizon*2) network output, no scaling applied."""
        h1 = np.tanh(flat @ self.w1.T + self.b1)
        h2 = np.tanh(h1 @ self.w2.T + self.b2)
        return h2 @ self.w3.T + self.b3

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel()
                               for n in ("w1", "b1", "w2", "b2", "w3", "b3")])

    def from_vector(self, vec: np.ndarray) -> "FeedforwardModel":
        out = {}
        pos = 0
        for name in ("w1", "b1", "w2", "b2", "w3", "b3"):
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = vec[pos:pos + size].reshape(shape).copy()
            pos += size
        return FeedforwardModel(**out)


def init_feedforward(history_len: int, feature_dim: int, horizon: int,
                     hidden: int, seed: int) -> FeedforwardModel:
    rng = np.random.default_rng(seed)
    d_in = history_len * feature_dim
    def layer(n_out, n_in):
        return rng.uniform(-1.0, 1.0, size=(n_out, n_in)) / math.sqrt(n_in)
    return FeedforwardModel(
        w1=layer(hidden, d_in), b1=np.zeros(hidden),
        w2=layer(hidden, hidden), b2=np.zeros(hidden),
        w3=layer(horizon * 2, hidden), b3=np.zeros(horizon * 2))


def _ff_loss_and_gradients(model: FeedforwardModel, flat: np.ndarray,
                           targets: np.ndarray):
    """MSE and gradients for a batch: flat (B, T*D), targets (B, horizon*2)."""
    h1 = np.tanh(flat @ model.w1.T + model.b1)
    h2 = np.tanh(h1 @ model.w2.T + model.b2)
    out = h2 @ model.w3.T + model.b3
    diff = out - targets
    loss = float(np.mean(diff**2))
    dout = 2.0 * diff / diff.size
    gw3 = dout.T @ h2
    gb3 = dout.sum(axis=0)
    dh2 = (dout @ model.w3) * (1.0 - h2**2)
    gw2 = dh2.T @ h1
    gb2 = dh2.sum(axis=0)
    dh1 = (dh2 @ model.w2) * (1.0 - h1**2)
    gw1 = dh1.T @ flat
    gb1 = dh1.sum(axis=0)
    grad = np.concatenate([gw1.ravel(), gb1, gw2.ravel(), gb2, gw3.ravel(), gb3])
    return loss, grad


@dataclass
class FeedforwardPredictor:
    """Trained feedforward model bundled with its frozen scalers."""

    model: FeedforwardModel
    in_scaler: FeatureScaler
    out_scaler: FeatureScaler
    history_len: int
    dt: float

    def predict(self, window: FeatureWindow, horizon_steps: int) -> np.ndarray:
        return predict_feedforward(self, window, horizon_steps)


def train_feedforward(model: FeedforwardModel, samples, hyper: TrainConfig,
                      seed: int) -> tuple[FeedforwardPredictor, list[float]]:
    """Fit on (history features (T, D), horizon deltas (K, 2)) pairs."""
    if not samples:
        raise ValueError("empty dataset")
    hist_len = len(samples[0][0])
    feats = np.concatenate([np.asarray(f, dtype=float) for f, _ in samples])
    deltas = np.concatenate([np.asarray(t, dtype=float) for _, t in samples])
    in_scaler = FeatureScaler.fit(feats)
    out_scaler = FeatureScaler.fit(deltas)
    flat = np.stack([in_scaler.transform(f).ravel() for f, _ in samples])
    tgts = np.stack([out_scaler.transform(t).ravel() for _, t in samples])

    rng = np.random.default_rng(seed)
    vec = model.to_vector()
    adam = _AdamState.zeros(len(vec))
    order = np.arange(len(samples))
    history = []
    for epoch in range(hyper.epochs):
        rng.shuffle(order)
        losses = []
        for start in range(0, len(samples), hyper.batch_size):
            idx = order[start:start + hyper.batch_size]
            current = model.from_vector(vec)
            loss, grad = _ff_loss_and_gradients(current, flat[idx], tgts[idx])
            if not math.isfinite(loss):
                raise ArithmeticError(
                    f"non-finite loss in epoch {epoch}, batch starting at {start}")
            vec = adam.update(vec, clip_gradient(grad, hyper.clip_norm),
                              hyper.learning_rate)
            losses.append(loss)
        history.append(float(np.mean(losses)))
    predictor = FeedforwardPredictor(model=model.from_vector(vec),
                                     in_scaler=in_scaler, out_scaler=out_scaler,
                                     history_len=hist_len, dt=hyper.dt)
    return predictor, history


def predict_feedforward(predictor: FeedforwardPredictor, window: FeatureWindow,
                        horizon_steps: int) -> np.ndarray:
    """Single-shot multi-horizon forecast; truncates to ``horizon_steps``."""
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    if len(window) < predictor.history_len:
        raise ValueError(
            f"window length {len(window)} < required history {predictor.history_len}")
    if horizon_steps > predictor.model.horizon:
        raise ValueError(
            f"horizon {horizon_steps} exceeds trained horizon {predictor.model.horizon}")
    hist = window.history[-predictor.history_len:]
    flat = predictor.in_scaler.transform(hist).ravel()[None, :]
    raw = predictor.model.raw_forward(flat)[0]
    deltas = predictor.out_scaler.inverse(raw.reshape(-1, 2))[:horizon_steps]
    a = window.anchor
    out = np.empty((horizon_steps, 3))
    x, y = a.x, a.y
    for k in range(horizon_steps):
        d_lat, d_lon = float(deltas[k, 0]), float(deltas[k, 1])
        x += d_lon
        y += d_lat
        out[k] = (x, y, math.hypot(d_lon, d_lat) / window.dt)
    return out
