"""Recurrent sequence predictor mapping SNR windows to posterior poses.

The network is a single LSTM layer unrolled over the n_prior window
followed by one affine head that emits all l_max posterior pose vectors
jointly from the final hidden state. Everything is plain float64 numpy:
the forward recursion is

    i, f, o = sigmoid(W x_t + U h_{t-1} + b)     (gate slices)
    g       = tanh(W x_t + U h_{t-1} + b)        (candidate slice)
    c_t     = f * c_{t-1} + i * g
    h_t     = o * tanh(c_t)

with h_0 = c_0 = 0, and training is full backpropagation through time
on the mean-squared error over every head output, optimized with
adaptive moments and global gradient-norm clipping. Single-threaded
runs are bit-reproducible from the seed.
"""

import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .channel import RoomLayout
from .dataset import (Dataset, DatasetMeta, decode_pose, decode_pose_array,
                      denormalize_labels, derive_seed, normalize_features,
                      normalize_labels)
from .geometry import Pose, angle_abs_diff

_PARAM_ORDER = ["w_in", "w_rec", "bias", "w_head", "b_head"]
_STREAM_INIT = 21
_STREAM_BATCHES = 22
_STREAM_VALSPLIT = 23


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        super().__init__(f"training loss became non-finite at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    clip_norm: float = 5.0
    validation_fraction: float = 0.1
    seed: int = 0
    lr_decay: float = 1.0  # per-epoch multiplier

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError("lr_decay must lie in (0, 1]")


@dataclass
class LstmModel:
    w_in: np.ndarray    # (4H, M) gate order [i, f, g, o]
    w_rec: np.ndarray   # (4H, H)
    bias: np.ndarray    # (4H,)
    w_head: np.ndarray  # (l_max * pose_dim, H)
    b_head: np.ndarray  # (l_max * pose_dim,)
    hidden_size: int
    meta: DatasetMeta   # normalization statistics travel with the weights

    @property
    def params(self) -> dict:
        return {name: getattr(self, name) for name in _PARAM_ORDER}

    def copy_params(self) -> dict:
        return {name: getattr(self, name).copy() for name in _PARAM_ORDER}

    def set_params(self, params: dict):
        for name in _PARAM_ORDER:
            getattr(self, name)[...] = params[name]


def init_model(meta: DatasetMeta, hidden_size: int = 100, seed: int = 0) -> LstmModel:
    """Uniform +-1/sqrt(H) weights, zero biases except forget gate at +1."""
    rng = np.random.default_rng(derive_seed(seed, _STREAM_INIT))
    h, m = hidden_size, meta.m_aps
    out_dim = meta.l_max * meta.pose_dim
    lim = 1.0 / np.sqrt(h)
    w_in = rng.uniform(-lim, lim, (4 * h, m))
    w_rec = rng.uniform(-lim, lim, (4 * h, h))
    bias = np.zeros(4 * h)
    bias[h:2 * h] = 1.0
    w_head = rng.uniform(-lim, lim, (out_dim, h))
    b_head = np.zeros(out_dim)
    return LstmModel(w_in, w_rec, bias, w_head, b_head, h, meta)


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _forward_cached(model: LstmModel, feats: np.ndarray):
    """Batched forward pass; returns head outputs plus per-step activations."""
    b, n, _ = feats.shape
    h = model.hidden_size
    hs = np.zeros((b, h))
    cs = np.zeros((b, h))
    cache = []
    for t in range(n):
        x = feats[:, t, :]
        pre = x @ model.w_in.T + hs @ model.w_rec.T + model.bias
        i = _sigmoid(pre[:, :h])
        f = _sigmoid(pre[:, h:2 * h])
        g = np.tanh(pre[:, 2 * h:3 * h])
        o = _sigmoid(pre[:, 3 * h:])
        c_new = f * cs + i * g
        tanh_c = np.tanh(c_new)
        h_new = o * tanh_c
        cache.append((x, hs, cs, i, f, g, o, c_new, tanh_c))
        hs, cs = h_new, c_new
    out = hs @ model.w_head.T + model.b_head
    return out, hs, cache


def lstm_forward(model: LstmModel, feats: np.ndarray) -> np.ndarray:
    """Normalized feature window(s) -> normalized head outputs.

    Accepts (n_prior, M) or (batch, n_prior, M); non-finite input is an error.
    """
    feats = np.asarray(feats, dtype=float)
    single = feats.ndim == 2
    if single:
        feats = feats[None]
    if not np.all(np.isfinite(feats)):
        raise ValueError("non-finite feature input")
    out, _, _ = _forward_cached(model, feats)
    return out[0] if single else out


def lstm_backward(model: LstmModel, feats: np.ndarray, targets: np.ndarray):
    """Mean-squared-error loss over all head outputs and its exact gradients.

    Reverse accumulation through the unrolled recursion; targets are the
    normalized label blocks flattened to (batch, l_max * pose_dim).
    """
    feats = np.asarray(feats, dtype=float)
    targets = np.asarray(targets, dtype=float).reshape(feats.shape[0], -1)
    if feats.shape[0] == 0:
        raise ValueError("empty batch")
    b, n, _ = feats.shape
    h = model.hidden_size
    out, h_last, cache = _forward_cached(model, feats)
    resid = out - targets
    loss = float(np.mean(resid**2))

    d_out = 2.0 * resid / resid.size
    grads = {name: np.zeros_like(arr) for name, arr in model.params.items()}
    grads["w_head"] = d_out.T @ h_last
    grads["b_head"] = d_out.sum(axis=0)
    dh = d_out @ model.w_head
    dc = np.zeros((b, h))
    for t in range(n - 1, -1, -1):
        x, h_prev, c_prev, i, f, g, o, c_new, tanh_c = cache[t]
        do = dh * tanh_c
        dc = dc + dh * o * (1.0 - tanh_c**2)
        di = dc * g
        df = dc * c_prev
        dg = dc * i
        dpre = np.hstack([
            di * i * (1.0 - i),
            df * f * (1.0 - f),
            dg * (1.0 - g**2),
            do * o * (1.0 - o),
        ])
        grads["w_in"] += dpre.T @ x
        grads["w_rec"] += dpre.T @ h_prev
        grads["bias"] += dpre.sum(axis=0)
        dh = dpre @ model.w_rec
        dc = dc * f
    return grads, loss


def _clip_gradients(grads: dict, max_norm: float) -> float:
    total = np.sqrt(sum(float(np.sum(g**2)) for g in grads.values()))
    if total > max_norm:
        factor = max_norm / total
        for g in grads.values():
            g *= factor
    return total


def _mse(model: LstmModel, feats: np.ndarray, targets: np.ndarray,
         batch: int = 4096) -> float:
    total, count = 0.0, 0
    targets = targets.reshape(feats.shape[0], -1)
    for start in range(0, feats.shape[0], batch):
        out = lstm_forward(model, feats[start:start + batch])
        r = out - targets[start:start + batch]
        total += float(np.sum(r**2))
        count += r.size
    return total / count


@dataclass
class TrainHistory:
    epochs: List[int] = field(default_factory=list)
    train_mse: List[float] = field(default_factory=list)
    val_mse: List[float] = field(default_factory=list)
    best_epoch: int = 0
    wall_time_s: float = 0.0


def train(train_set: Dataset, config: TrainConfig, hidden_size: int = 100):
    """Fit the predictor on the training partition; epoch 0 rows hold the
    untrained losses and the returned weights are the best-validation
    snapshot."""
    meta = train_set.meta
    feats = normalize_features(train_set.features, meta)
    labels = normalize_labels(train_set.labels, meta).reshape(len(train_set), -1)

    n = feats.shape[0]
    rng_split = np.random.default_rng(derive_seed(config.seed, _STREAM_VALSPLIT))
    perm = rng_split.permutation(n)
    n_val = max(1, int(round(config.validation_fraction * n)))
    val_idx, fit_idx = perm[:n_val], perm[n_val:]
    if fit_idx.size == 0:
        raise ValueError("validation fraction leaves no training data")
    f_fit, l_fit = feats[fit_idx], labels[fit_idx]
    f_val, l_val = feats[val_idx], labels[val_idx]

    model = init_model(meta, hidden_size, config.seed)
    moments1 = {k: np.zeros_like(v) for k, v in model.params.items()}
    moments2 = {k: np.zeros_like(v) for k, v in model.params.items()}
    eps = 1e-8
    step = 0

    history = TrainHistory()
    t0 = time.perf_counter()
    history.epochs.append(0)
    history.train_mse.append(_mse(model, f_fit, l_fit))
    history.val_mse.append(_mse(model, f_val, l_val))
    best = {"val": history.val_mse[0], "epoch": 0, "params": model.copy_params()}

    rng_batches = np.random.default_rng(derive_seed(config.seed, _STREAM_BATCHES))
    for epoch in range(1, config.epochs + 1):
        lr = config.learning_rate * config.lr_decay ** (epoch - 1)
        order = rng_batches.permutation(f_fit.shape[0])
        epoch_loss, n_batches = 0.0, 0
        for start in range(0, order.size, config.batch_size):
            idx = order[start:start + config.batch_size]
            grads, loss = lstm_backward(model, f_fit[idx], l_fit[idx])
            if not np.isfinite(loss):
                raise TrainingDivergedError(epoch)
            _clip_gradients(grads, config.clip_norm)
            step += 1
            corr1 = 1.0 - config.beta1**step
            corr2 = 1.0 - config.beta2**step
            for name, g in grads.items():
                m1 = moments1[name]
                m2 = moments2[name]
                m1 *= config.beta1
                m1 += (1.0 - config.beta1) * g
                m2 *= config.beta2
                m2 += (1.0 - config.beta2) * g**2
                getattr(model, name)[...] -= (lr * (m1 / corr1)
                                              / (np.sqrt(m2 / corr2) + eps))
            epoch_loss += loss
            n_batches += 1
        val = _mse(model, f_val, l_val)
        if not np.isfinite(val):
            raise TrainingDivergedError(epoch)
        history.epochs.append(epoch)
        history.train_mse.append(epoch_loss / n_batches)
        history.val_mse.append(val)
        if val < best["val"]:
            best = {"val": val, "epoch": epoch, "params": model.copy_params()}
    model.set_params(best["params"])
    history.best_epoch = best["epoch"]
    history.wall_time_s = time.perf_counter() - t0
    return model, history


def predict_pose(model: LstmModel, window_features: np.ndarray, step: int,
                 layout: RoomLayout) -> Pose:
    """Posterior pose at offset step (1..l_max) from one stored feature window.

    Positions are clamped into the room; yaw decodes through the
    two-argument arctangent so it always lands in [0, 360).
    """
    meta = model.meta
    if not (1 <= step <= meta.l_max):
        raise ValueError(f"step must lie in 1..{meta.l_max}")
    out = lstm_forward(model, normalize_features(window_features, meta))
    blocks = denormalize_labels(out.reshape(meta.l_max, meta.pose_dim), meta)
    pose = decode_pose(blocks[step - 1], meta.yaw_mode)
    return Pose(
        float(np.clip(pose.x, 0.0, layout.length)),
        float(np.clip(pose.y, 0.0, layout.width)),
        float(np.clip(pose.z, 0.0, layout.height)),
        pose.alpha, pose.beta, pose.gamma)


def persistence_predict(last_pose: Pose, step: int) -> Pose:
    """Baseline that freezes the most recent pose for every posterior step."""
    if step < 1:
        raise ValueError("step must be >= 1")
    return last_pose


@dataclass
class EvalReport:
    steps: np.ndarray             # 1..l_max
    position_error_mean: np.ndarray
    position_error_samples: np.ndarray  # (l_max, n_test)
    angle_error_mean: np.ndarray  # (l_max, 3) yaw/pitch/roll, deg
    persistence_error_mean: Optional[np.ndarray] = None


def evaluate(model: LstmModel, test_set: Dataset, layout: RoomLayout) -> EvalReport:
    """Per-step positioning and orientation errors on held-out samples.

    When the test set carries anchors the persistence baseline is scored
    on the same samples.
    """
    meta = model.meta
    out = lstm_forward(model, normalize_features(test_set.features, meta))
    pred = denormalize_labels(
        out.reshape(len(test_set), meta.l_max, meta.pose_dim), meta)
    pred_pos, pred_ang = decode_pose_array(pred, meta.yaw_mode)
    pred_pos = np.clip(pred_pos, 0.0,
                       np.array([layout.length, layout.width, layout.height]))
    true_pos, true_ang = decode_pose_array(test_set.labels, meta.yaw_mode)

    err = np.linalg.norm(pred_pos - true_pos, axis=-1)  # (Q, l_max)
    ang_err = angle_abs_diff(pred_ang, true_ang)        # (Q, l_max, 3)

    report = EvalReport(
        steps=np.arange(1, meta.l_max + 1),
        position_error_mean=err.mean(axis=0),
        position_error_samples=err.T.copy(),
        angle_error_mean=ang_err.mean(axis=0))
    if test_set.anchors is not None:
        anchor_pos, _ = decode_pose_array(test_set.anchors, meta.yaw_mode)
        pers = np.linalg.norm(anchor_pos[:, None, :] - true_pos, axis=-1)
        report.persistence_error_mean = pers.mean(axis=0)
    return report


# ---------------------------------------------------------------------------
# model persistence: meta text file + flat float64 parameter file
# ---------------------------------------------------------------------------

def save_model(model: LstmModel, stem: str):
    meta = model.meta
    shapes = {name: getattr(model, name).shape for name in _PARAM_ORDER}
    lines = [
        "format_version: 1",
        f"hidden_size: {model.hidden_size}",
        f"gate_activation: tanh",
        f"recurrent_activation: sigmoid",
        f"tensor_order: {' '.join(_PARAM_ORDER)}",
    ]
    for name in _PARAM_ORDER:
        lines.append(f"shape_{name}: {' '.join(str(d) for d in shapes[name])}")
    for key in ("m_aps", "n_prior", "l_max", "n_samples", "snr_floor_db",
                "train_fraction", "uplink_users", "feature_mode", "yaw_mode",
                "master_seed", "config_fingerprint"):
        lines.append(f"{key}: {getattr(meta, key)}")
    for key in ("feature_mean", "feature_scale", "label_offset", "label_scale"):
        vec = " ".join(repr(float(v)) for v in getattr(meta, key))
        lines.append(f"{key}: {vec}")
    with open(f"{stem}.meta", "w") as fh:
        fh.write("\n".join(lines) + "\n")
    flat = np.concatenate([getattr(model, name).ravel() for name in _PARAM_ORDER])
    with open(f"{stem}.params", "wb") as fh:
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def load_model(stem: str) -> LstmModel:
    values = {}
    path = f"{stem}.meta"
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if ":" not in line:
                raise ValueError(f"{path}: line {lineno}: expected 'key: value'")
            key, _, val = line.partition(":")
            values[key.strip()] = val.strip()
    meta = DatasetMeta(
        m_aps=int(values["m_aps"]), n_prior=int(values["n_prior"]),
        l_max=int(values["l_max"]), n_samples=int(values["n_samples"]),
        snr_floor_db=float(values["snr_floor_db"]),
        train_fraction=float(values["train_fraction"]),
        uplink_users=int(values["uplink_users"]),
        feature_mode=values["feature_mode"], yaw_mode=values["yaw_mode"],
        master_seed=int(values["master_seed"]),
        config_fingerprint=values["config_fingerprint"],
        feature_mean=np.array([float(v) for v in values["feature_mean"].split()]),
        feature_scale=np.array([float(v) for v in values["feature_scale"].split()]),
        label_offset=np.array([float(v) for v in values["label_offset"].split()]),
        label_scale=np.array([float(v) for v in values["label_scale"].split()]))
    shapes = {name: tuple(int(d) for d in values[f"shape_{name}"].split())
              for name in _PARAM_ORDER}
    with open(f"{stem}.params", "rb") as fh:
        flat = np.frombuffer(fh.read(), dtype="<f8")
    expected = sum(int(np.prod(s)) for s in shapes.values())
    if flat.size != expected:
        raise ValueError(f"{stem}.params: expected {expected} values, found {flat.size}")
    tensors, offset = {}, 0
    for name in _PARAM_ORDER:
        size = int(np.prod(shapes[name]))
        tensors[name] = flat[offset:offset + size].reshape(shapes[name]).copy()
        offset += size
    return LstmModel(tensors["w_in"], tensors["w_rec"], tensors["bias"],
                     tensors["w_head"], tensors["b_head"],
                     int(values["hidden_size"]), meta)
