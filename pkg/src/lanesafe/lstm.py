"""Gated recurrent sequence model, written directly on numpy.

One cell update, with z = [h_prev, x] and elementwise products:

    f = sigmoid(w_f @ z + b_f)          forget gate
    i = sigmoid(w_i @ z + b_i)          input gate
    a = tanh(w_c @ z + b_c)             candidate cell state
    c = f * c_prev + i * a              cell state
    o = sigmoid(w_o @ z + b_o)          output gate
    h = o * tanh(c)                     hidden state

A linear readout y = w_y @ h + b_y maps the hidden state to the model
output. Training runs full backpropagation through time with mean-squared
error on the outputs, gradient-norm clipping, and per-parameter adaptive
step sizes; everything is float64 and bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .features import FeatureScaler, FeatureWindow, WindowAnchor, EGO_FEATURES
from .vehicle import lane_center, nearest_lane

GATE_NAMES = ("w_f", "w_i", "w_c", "w_o")
BIAS_NAMES = ("b_f", "b_i", "b_c", "b_o")
PARAM_ORDER = GATE_NAMES + BIAS_NAMES + ("w_y", "b_y")


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class LstmParams:
    """All gate weights/biases plus the linear readout.

    Gate matrices have shape (H, H+D) and multiply the concatenation
    [h_prev, x]; the readout w_y has shape (O, H).
    """

    w_f: np.ndarray
    w_i: np.ndarray
    w_c: np.ndarray
    w_o: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    w_y: np.ndarray
    b_y: np.ndarray

    def __post_init__(self):
        for name in PARAM_ORDER:
            setattr(self, name, np.asarray(getattr(self, name), dtype=float))
        h, hd = self.w_f.shape
        if hd <= h:
            raise ValueError(f"gate width {hd} must exceed hidden size {h}")
        for name in GATE_NAMES:
            if getattr(self, name).shape != (h, hd):
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {(h, hd)}")
        for name in BIAS_NAMES:
            if getattr(self, name).shape != (h,):
                raise ValueError(f"{name} shape {getattr(self, name).shape} != {(h,)}")
        o = self.w_y.shape[0]
        if self.w_y.shape != (o, h) or self.b_y.shape != (o,):
            raise ValueError("readout shapes inconsistent with hidden size")
        for name in PARAM_ORDER:
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")

    @property
    def hidden_size(self) -> int:
        return self.w_f.shape[0]

    @property
    def input_size(self) -> int:
        return self.w_f.shape[1] - self.w_f.shape[0]

    @property
    def output_size(self) -> int:
        return self.w_y.shape[0]

    def copy(self) -> "LstmParams":
        return LstmParams(**{n: getattr(self, n).copy() for n in PARAM_ORDER})

    def to_vector(self) -> np.ndarray:
        return np.concatenate([getattr(self, n).ravel() for n in PARAM_ORDER])

    def from_vector(self, vec: np.ndarray) -> "LstmParams":
        """New params with this one's shapes and the given flat values."""
        out = {}
        pos = 0
        for name in PARAM_ORDER:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = np.asarray(vec[pos:pos + size], dtype=float).reshape(shape)
            pos += size
        if pos != len(vec):
            raise ValueError(f"vector length {len(vec)} != parameter count {pos}")
        return LstmParams(**out)

    def zeros_like(self) -> "LstmParams":
        return LstmParams(**{n: np.zeros_like(getattr(self, n)) for n in PARAM_ORDER})


@dataclass
class LstmState:
    """Recurrent pair (hidden h, cell c), both length H."""

    h: np.ndarray
    c: np.ndarray

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=float)
        self.c = np.asarray(self.c, dtype=float)
        if self.h.shape != self.c.shape:
            raise ValueError("h and c must share a shape")
        if not (np.all(np.isfinite(self.h)) and np.all(np.isfinite(self.c))):
            raise ValueError("non-finite recurrent state")

    @classmethod
    def zeros(cls, hidden_size: int) -> "LstmState":
        return cls(h=np.zeros(hidden_size), c=np.zeros(hidden_size))


@dataclass(frozen=True)
class IntentionDistribution:
    """Probabilities of keeping the lane or moving one lane left/right."""

    p_keep: float
    p_left: float
    p_right: float

    def __post_init__(self):
        total = self.p_keep + self.p_left + self.p_right
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total}, expected 1")
        for p in (self.p_keep, self.p_left, self.p_right):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"probability {p} outside [0, 1]")

    def argmax(self) -> str:
        labels = ("keep", "left", "right")
        probs = (self.p_keep, self.p_left, self.p_right)
        return labels[int(np.argmax(probs))]


def init_params(hidden_size: int, input_size: int, output_size: int,
                seed: int) -> LstmParams:
    """Uniform +-1/sqrt(H+D) weights, forget-gate bias 1, other biases 0."""
    rng = np.random.default_rng(seed)
    hd = hidden_size + input_size
    bound = 1.0 / math.sqrt(hd)
    gates = {n: rng.uniform(-bound, bound, size=(hidden_size, hd)) for n in GATE_NAMES}
    biases = {n: np.zeros(hidden_size) for n in BIAS_NAMES}
    biases["b_f"] = np.ones(hidden_size)
    w_y = rng.uniform(-1.0 / math.sqrt(hidden_size), 1.0 / math.sqrt(hidden_size),
                      size=(output_size, hidden_size))
    return LstmParams(**gates, **biases, w_y=w_y, b_y=np.zeros(output_size))


def cell_step(params: LstmParams, prev: LstmState, x: np.ndarray) -> LstmState:
    """One gated update of the recurrent pair for input vector ``x``."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.input_size,):
        raise ValueError(f"input shape {x.shape} != ({params.input_size},)")
    if prev.h.shape != (params.hidden_size,):
        raise ValueError(f"state size {prev.h.shape} != ({params.hidden_size},)")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input")
    z = np.concatenate([prev.h, x])
    f = sigmoid(params.w_f @ z + params.b_f)
    i = sigmoid(params.w_i @ z + params.b_i)
    a = np.tanh(params.w_c @ z + params.b_c)
    c = f * prev.c + i * a
    o = sigmoid(params.w_o @ z + params.b_o)
    return LstmState(h=o * np.tanh(c), c=c)


def forward(params: LstmParams, window: FeatureWindow,
            init: LstmState | None = None) -> tuple[list[LstmState], np.ndarray]:
    """Run the cell over the window; returns per-step states and readouts."""
    if init is None:
        init = LstmState.zeros(params.hidden_size)
    states: list[LstmState] = []
    state = init
    outputs = np.empty((len(window), params.output_size))
    for t in range(len(window)):
        state = cell_step(params, state, window.history[t])
        states.append(state)
        outputs[t] = params.w_y @ state.h + params.b_y
    return states, outputs


# ---------------------------------------------------------------------------
# Batched forward/backward used by training and the gradient check. Samples
# are stacked along the leading axis; reductions keep a fixed order so that
# results are reproducible bit for bit.
# ---------------------------------------------------------------------------

def _forward_batch(params: LstmParams, xs: np.ndarray):
    """xs: (B, T, D). Returns (outputs (B, T, O), cache for backward)."""
    b, t_len, _ = xs.shape
    h_sz = params.hidden_size
    h = np.zeros((b, h_sz))
    c = np.zeros((b, h_sz))
    cache = []
    outputs = np.empty((b, t_len, params.output_size))
    for t in range(t_len):
        z = np.concatenate([h, xs[:, t, :]], axis=1)
        f = sigmoid(z @ params.w_f.T + params.b_f)
        i = sigmoid(z @ params.w_i.T + params.b_i)
        a = np.tanh(z @ params.w_c.T + params.b_c)
        o = sigmoid(z @ params.w_o.T + params.b_o)
        c_new = f * c + i * a
        tc = np.tanh(c_new)
        h = o * tc
        cache.append((z, f, i, a, o, c, c_new, tc, h))
        c = c_new
        outputs[:, t, :] = h @ params.w_y.T + params.b_y
    return outputs, cache


def _backward_batch(params: LstmParams, cache, d_outputs: np.ndarray) -> LstmParams:
    """Gradients of a scalar loss given d(loss)/d(outputs); shapes as params."""
    grads = params.zeros_like()
    h_sz = params.hidden_size
    b = d_outputs.shape[0]
    dh_carry = np.zeros((b, h_sz))
    dc_carry = np.zeros((b, h_sz))
    for t in range(len(cache) - 1, -1, -1):
        z, f, i, a, o, c_prev, c_new, tc, h = cache[t]
        dy = d_outputs[:, t, :]
        grads.w_y += dy.T @ h
        grads.b_y += dy.sum(axis=0)
        dh = dy @ params.w_y + dh_carry
        dc = dh * o * (1.0 - tc**2) + dc_carry
        do = dh * tc
        dpo = do * o * (1.0 - o)
        dpf = dc * c_prev * f * (1.0 - f)
        dpi = dc * a * i * (1.0 - i)
        dpc = dc * i * (1.0 - a**2)
        dc_carry = dc * f
        grads.w_f += dpf.T @ z
        grads.w_i += dpi.T @ z
        grads.w_c += dpc.T @ z
        grads.w_o += dpo.T @ z
        grads.b_f += dpf.sum(axis=0)
        grads.b_i += dpi.sum(axis=0)
        grads.b_c += dpc.sum(axis=0)
        grads.b_o += dpo.sum(axis=0)
        dz = dpf @ params.w_f + dpi @ params.w_i + dpc @ params.w_c + dpo @ params.w_o
        dh_carry = dz[:, :h_sz]
    return grads


def _stack_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if not batch:
        raise ValueError("empty batch")
    t_len = len(batch[0][0])
    xs, ys = [], []
    for window, target in batch:
        if len(window) != t_len:
            raise ValueError("all windows in a batch must share one length")
        target = np.asarray(target, dtype=float)
        if target.shape[0] != t_len:
            raise ValueError(f"target length {target.shape[0]} != window length {t_len}")
        xs.append(window.history)
        ys.append(target)
    return np.stack(xs), np.stack(ys)


def loss_and_gradients(params: LstmParams, batch) -> tuple[float, LstmParams]:
    """Mean-squared-error loss and its full BPTT gradient.

    ``batch`` is a list of (FeatureWindow, target) pairs whose targets match
    the readout: shape (T, O). The loss is the mean squared error over every
    output entry of every sample, so gradients are comparable across batch
    sizes. Initial recurrent state is zero.
    """
    xs, ys = _stack_batch(batch)
    if xs.shape[2] != params.input_size:
        raise ValueError(f"feature dim {xs.shape[2]} != input size {params.input_size}")
    if ys.shape[2] != params.output_size:
        raise ValueError(f"target dim {ys.shape[2]} != output size {params.output_size}")
    outputs, cache = _forward_batch(params, xs)
    diff = outputs - ys
    loss = float(np.mean(diff**2))
    d_outputs = 2.0 * diff / diff.size
    grads = _backward_batch(params, cache, d_outputs)
    return loss, grads


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def intention_loss_and_gradients(params: LstmParams, batch) -> tuple[float, LstmParams]:
    """Cross-entropy on the softmax of the final step's readout.

    ``batch`` is a list of (FeatureWindow, class index). Class order is
    (keep, left, right).
    """
    if not batch:
        raise ValueError("empty batch")
    xs = np.stack([w.history for w, _ in batch])
    labels = np.array([int(lbl) for _, lbl in batch])
    outputs, cache = _forward_batch(params, xs)
    logits = outputs[:, -1, :]
    probs = _softmax(logits)
    b = len(batch)
    loss = float(-np.mean(np.log(probs[np.arange(b), labels] + 1e-300)))
    d_outputs = np.zeros_like(outputs)
    dlogits = probs.copy()
    dlogits[np.arange(b), labels] -= 1.0
    d_outputs[:, -1, :] = dlogits / b
    grads = _backward_batch(params, cache, d_outputs)
    return loss, grads


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    dt: float = 0.1
    # Minimum window length the trained model will accept at inference;
    # defaults to the training sequence length when left unset.
    history_len: int | None = None


@dataclass
class _AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n: int) -> "_AdamState":
        return cls(m=np.zeros(n), v=np.zeros(n))

    def update(self, vec: np.ndarray, grad: np.ndarray, lr: float,
               beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> np.ndarray:
        self.step += 1
        self.m = beta1 * self.m + (1.0 - beta1) * grad
        self.v = beta2 * self.v + (1.0 - beta2) * grad**2
        m_hat = self.m / (1.0 - beta1**self.step)
        v_hat = self.v / (1.0 - beta2**self.step)
        return vec - lr * m_hat / (np.sqrt(v_hat) + eps)


def clip_gradient(grad_vec: np.ndarray, max_norm: float) -> np.ndarray:
    norm = float(np.linalg.norm(grad_vec))
    if norm > max_norm:
        return grad_vec * (max_norm / norm)
    return grad_vec


def _run_training(params: LstmParams, samples, hyper: TrainConfig, seed: int,
                  loss_fn) -> tuple[LstmParams, list[float]]:
    if not samples:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    vec = params.to_vector()
    adam = _AdamState.zeros(len(vec))
    history: list[float] = []
    order = np.arange(len(samples))
    for epoch in range(hyper.epochs):
        rng.shuffle(order)
        epoch_losses = []
        for start in range(0, len(samples), hyper.batch_size):
            batch = [samples[j] for j in order[start:start + hyper.batch_size]]
            current = params.from_vector(vec)
            loss, grads = loss_fn(current, batch)
            if not math.isfinite(loss):
                raise ArithmeticError(
                    f"non-finite loss in epoch {epoch}, batch starting at {start}")
            gvec = clip_gradient(grads.to_vector(), hyper.clip_norm)
            vec = adam.update(vec, gvec, hyper.learning_rate)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return params.from_vector(vec), history


# ---------------------------------------------------------------------------
# Trained model bundles: parameters plus the frozen feature/target scalers
# that make inference reproducible.
# ---------------------------------------------------------------------------

@dataclass
class LstmModel:
    """Trajectory predictor: per-step displacement deltas from raw windows."""

    params: LstmParams
    in_scaler: FeatureScaler
    out_scaler: FeatureScaler
    history_len: int
    dt: float

    def predict(self, window: FeatureWindow, horizon_steps: int) -> np.ndarray:
        return predict_trajectory(self, window, horizon_steps)


@dataclass
class IntentionModel:
    """Maneuver classifier head over the final hidden state."""

    params: LstmParams
    in_scaler: FeatureScaler
    history_len: int
    dt: float

    def classify(self, window: FeatureWindow) -> IntentionDistribution:
        return classify_intention(self, window)


def train(params: LstmParams, samples, hyper: TrainConfig,
          seed: int) -> tuple[LstmModel, list[float]]:
    """Fit the trajectory predictor on raw (features, delta-target) sequences.

    ``samples`` is a list of (features (T, D), targets (T, 2)) arrays in world
    units; scalers are fitted here on the training data and frozen into the
    returned model. Deterministic for a fixed seed.
    """
    if not samples:
        raise ValueError("empty dataset")
    feats = np.concatenate([np.asarray(f, dtype=float) for f, _ in samples])
    tgts = np.concatenate([np.asarray(t, dtype=float) for _, t in samples])
    in_scaler = FeatureScaler.fit(feats)
    out_scaler = FeatureScaler.fit(tgts)
    norm_batch = []
    for f, t in samples:
        w = FeatureWindow(history=in_scaler.transform(f), dt=hyper.dt,
                          anchor=_DUMMY_ANCHOR)
        norm_batch.append((w, out_scaler.transform(t)))
    trained, history = _run_training(params, norm_batch, hyper, seed,
                                     loss_and_gradients)
    model = LstmModel(params=trained, in_scaler=in_scaler, out_scaler=out_scaler,
                      history_len=hyper.history_len or len(samples[0][0]),
                      dt=hyper.dt)
    return model, history


def train_intention(params: LstmParams, samples, hyper: TrainConfig,
                    seed: int) -> tuple[IntentionModel, list[float]]:
    """Fit the 3-way maneuver classifier on raw (features, label) pairs."""
    if not samples:
        raise ValueError("empty dataset")
    if params.output_size != 3:
        raise ValueError("intention head requires output size 3")
    feats = np.concatenate([np.asarray(f, dtype=float) for f, _ in samples])
    in_scaler = FeatureScaler.fit(feats)
    norm_batch = [(FeatureWindow(history=in_scaler.transform(f), dt=hyper.dt,
                                 anchor=_DUMMY_ANCHOR), lbl)
                  for f, lbl in samples]
    trained, history = _run_training(params, norm_batch, hyper, seed,
                                     intention_loss_and_gradients)
    model = IntentionModel(params=trained, in_scaler=in_scaler,
                           history_len=hyper.history_len or len(samples[0][0]),
                           dt=hyper.dt)
    return model, history


_DUMMY_ANCHOR = WindowAnchor(x=0.0, y=0.0, vx=0.0, vy=0.0, a=0.0, heading=0.0,
                             lane_width=3.5, lane_count=3)


def predict_trajectory(model: LstmModel, window: FeatureWindow,
                       horizon_steps: int) -> np.ndarray:
    """Multi-step (x, y, v) forecast by iterated one-step prediction.

    The network emits per-step (lateral, longitudinal) displacement deltas.
    Each predicted delta is integrated into the world-frame pose, re-encoded
    as the next ego feature row, and fed back. Three feedback slots are NOT
    derived from the predicted deltas, because re-deriving speed and
    acceleration from one-step differences amplifies per-step noise by 1/dt
    and 1/dt^2 and turns the rollout into a random walk:

    * neighbor slots are held at their last observed values,
    * the acceleration slot is held at its last observed value,
    * the speed slot evolves kinematically, v_k = max(0, v_0 + a_held*k*dt),

    so an observed braking or accelerating trend extrapolates cleanly
    through the horizon. The returned speed column is this kinematic speed
    (one-step displacement rates would carry position noise amplified by
    1/dt straight into downstream gap margins), and once it reaches zero
    the pose is frozen: a vehicle extrapolated to standstill stays put no
    matter what residual bias the network carries at zero speed. Returns an
    array of shape (horizon_steps, 3).
    """
    if horizon_steps < 1:
        raise ValueError("horizon_steps must be >= 1")
    if len(window) < model.history_len:
        raise ValueError(
            f"window length {len(window)} < required history {model.history_len}")
    anchor = window.anchor
    dt = window.dt
    norm = FeatureWindow(history=model.in_scaler.transform(window.history),
                         dt=dt, anchor=anchor)
    states, outputs = forward(model.params, norm)
    state = states[-1]
    neighbor_block = window.history[-1, EGO_FEATURES:]

    x, y = anchor.x, anchor.y
    held_accel = window.history[-1, 3]
    v_feat = window.history[-1, 1]
    heading = anchor.heading
    result = np.empty((horizon_steps, 3))
    delta = model.out_scaler.inverse(outputs[-1])
    for k in range(horizon_steps):
        v_feat = max(0.0, v_feat + held_accel * dt)
        if v_feat <= 0.0:
            d_lat = d_lon = 0.0
        else:
            d_lat, d_lon = float(delta[0]), float(delta[1])
        x += d_lon
        y += d_lat
        if math.hypot(d_lon, d_lat) > 1e-9 * dt:
            heading = math.atan2(d_lat, d_lon)
        result[k] = (x, y, v_feat)
        if k == horizon_steps - 1:
            break
        lane = nearest_lane(y, anchor.lane_width, anchor.lane_count)
        row = np.empty(window.history.shape[1])
        row[0] = y - lane_center(lane, anchor.lane_width)
        row[1] = v_feat * math.cos(heading)
        row[2] = v_feat * math.sin(heading)
        row[3] = held_accel
        row[4] = heading
        row[EGO_FEATURES:] = neighbor_block
        state = cell_step(model.params, state, model.in_scaler.transform(row))
        delta = model.out_scaler.inverse(model.params.w_y @ state.h + model.params.b_y)
    if not np.all(np.isfinite(result)):
        raise ArithmeticError("non-finite prediction")
    return result


def classify_intention(model: IntentionModel,
                       window: FeatureWindow) -> IntentionDistribution:
    """Softmax over the final step's readout; class order (keep, left, right)."""
    if model.params.output_size != 3:
        raise ValueError("intention head requires output size 3")
    norm = FeatureWindow(history=model.in_scaler.transform(window.history),
                         dt=window.dt, anchor=window.anchor)
    _, outputs = forward(model.params, norm)
    probs = _softmax(outputs[-1])
    probs = probs / probs.sum()
    return IntentionDistribution(p_keep=float(probs[0]), p_left=float(probs[1]),
                                 p_right=float(probs[2]))
