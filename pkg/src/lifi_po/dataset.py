"""Supervised dataset pipeline: windows of prior uplink SNR vectors mapped
to sequences of posterior device poses.

Each sample is built from one seeded trajectory of n_prior + l_max slots:
the first n_prior slots yield SNR feature vectors (stored in dB with a
floor so out-of-view zeros stay finite), the remaining l_max slots yield
encoded pose labels. Yaw is encoded as (sin, cos) so the regression
target stays continuous across the 0/360 wrap; positions and remaining
angles are min-max scaled using statistics from the training partition
only.
"""

import hashlib
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .channel import RoomLayout, uplink_channel, uplink_snr
from .geometry import DeviceGeometry, Pose, clamp_half_open, wrap_pitch, wrap_yaw
from .mobility import MobilityConfig, sample_trajectory

_STREAM_TRAJECTORY = 11
_STREAM_FEATURE_NOISE = 12
_STREAM_SPLIT = 13

_SCALE_EPS = 1e-12


class DatasetFormatError(ValueError):
    """Malformed dataset file pair."""


@dataclass
class DatasetConfig:
    n_prior: int = 8
    l_max: int = 4
    n_samples: int = 20000
    snr_floor_db: float = -30.0
    train_fraction: float = 0.9
    uplink_users: int = 1
    feature_mode: str = "db"      # "db" | "linear" (ablation)
    yaw_mode: str = "sincos"      # "sincos" | "raw" (ablation)
    feature_noise_std: float = 0.0  # multiplicative noise on the gain, 0 = off

    def __post_init__(self):
        if self.n_prior < 1 or self.l_max < 1:
            raise ValueError("n_prior and l_max must be >= 1")
        if not (0.0 < self.train_fraction < 1.0):
            raise ValueError("train_fraction must lie in (0, 1)")
        if self.feature_mode not in ("db", "linear"):
            raise ValueError("feature_mode must be 'db' or 'linear'")
        if self.yaw_mode not in ("sincos", "raw"):
            raise ValueError("yaw_mode must be 'sincos' or 'raw'")

    @property
    def pose_dim(self) -> int:
        return 7 if self.yaw_mode == "sincos" else 6


@dataclass
class DatasetMeta:
    m_aps: int
    n_prior: int
    l_max: int
    n_samples: int
    snr_floor_db: float
    train_fraction: float
    uplink_users: int
    feature_mode: str
    yaw_mode: str
    master_seed: int
    config_fingerprint: str
    feature_mean: np.ndarray   # (M,)
    feature_scale: np.ndarray  # (M,)
    label_offset: np.ndarray   # (pose_dim,)
    label_scale: np.ndarray    # (pose_dim,)

    @property
    def pose_dim(self) -> int:
        return 7 if self.yaw_mode == "sincos" else 6


@dataclass
class Sample:
    features: np.ndarray  # (n_prior, M)
    labels: np.ndarray    # (l_max, pose_dim)
    anchor: np.ndarray    # encoded pose of the last prior slot


@dataclass
class Dataset:
    features: np.ndarray            # (Q, n_prior, M)
    labels: np.ndarray              # (Q, l_max, pose_dim)
    meta: DatasetMeta
    anchors: Optional[np.ndarray] = None  # (Q, pose_dim); None after loading from disk

    def __len__(self) -> int:
        return self.features.shape[0]


def derive_seed(*keys) -> np.random.SeedSequence:
    """Deterministic child seed from a tuple of non-negative integers."""
    return np.random.SeedSequence([int(k) for k in keys])


def encode_pose(pose: Pose, yaw_mode: str = "sincos") -> np.ndarray:
    if yaw_mode == "sincos":
        a = np.radians(pose.alpha)
        return np.array([pose.x, pose.y, pose.z, np.sin(a), np.cos(a),
                         pose.beta, pose.gamma])
    return np.array([pose.x, pose.y, pose.z, pose.alpha, pose.beta, pose.gamma])


def decode_pose_array(vecs: np.ndarray, yaw_mode: str = "sincos"):
    """Vectorized decode: (..., pose_dim) -> positions (..., 3), angles (..., 3)."""
    vecs = np.asarray(vecs, dtype=float)
    positions = vecs[..., :3]
    if yaw_mode == "sincos":
        alpha = np.mod(np.degrees(np.arctan2(vecs[..., 3], vecs[..., 4])), 360.0)
        beta, gamma = vecs[..., 5], vecs[..., 6]
    else:
        alpha = np.mod(vecs[..., 3], 360.0)
        beta, gamma = vecs[..., 4], vecs[..., 5]
    angles = np.stack([alpha, beta, gamma], axis=-1)
    return positions, angles


def decode_pose(vec: np.ndarray, yaw_mode: str = "sincos") -> Pose:
    pos, ang = decode_pose_array(vec, yaw_mode)
    return Pose(float(pos[0]), float(pos[1]), float(pos[2]),
                wrap_yaw(float(ang[0])), wrap_pitch(float(ang[1])),
                clamp_half_open(float(ang[2]), -90.0, 90.0))


def snr_to_features(snr: np.ndarray, config_or_meta) -> np.ndarray:
    """Linear SNR values to stored feature values (dB with floor by default)."""
    snr = np.asarray(snr, dtype=float)
    if config_or_meta.feature_mode == "linear":
        return snr
    with np.errstate(divide="ignore"):
        db = 10.0 * np.log10(snr)
    return np.maximum(db, config_or_meta.snr_floor_db)


def generate_sample(seed_keys, config: DatasetConfig, mobility: MobilityConfig,
                    layout: RoomLayout,
                    geom: DeviceGeometry = DeviceGeometry()) -> Sample:
    """One (SNR window, posterior pose sequence) pair from a fresh trajectory.

    seed_keys is the integer key tuple identifying the sample, typically
    (master_seed, sample_index).
    """
    keys = tuple(seed_keys) if isinstance(seed_keys, (tuple, list)) else (seed_keys,)
    n_steps = config.n_prior + config.l_max
    traj = sample_trajectory(derive_seed(*keys, _STREAM_TRAJECTORY), n_steps,
                             mobility, layout)
    gains = np.array([uplink_channel(p, layout, geom)
                      for p in traj.poses[:config.n_prior]])
    if config.feature_noise_std > 0.0:
        noise_rng = np.random.default_rng(derive_seed(*keys, _STREAM_FEATURE_NOISE))
        gains = gains * np.maximum(
            0.0, 1.0 + config.feature_noise_std * noise_rng.standard_normal(gains.shape))
    snr = uplink_snr(gains, layout.dc_bias, config.uplink_users,
                     layout.noise_psd, layout.bandwidth)
    features = snr_to_features(snr, config)
    labels = np.array([encode_pose(p, config.yaw_mode)
                       for p in traj.poses[config.n_prior:]])
    anchor = encode_pose(traj.poses[config.n_prior - 1], config.yaw_mode)
    return Sample(features, labels, anchor)


def regenerate_anchors(meta: DatasetMeta, indices, mobility: MobilityConfig,
                       layout: RoomLayout) -> np.ndarray:
    """Re-derive last-prior-slot poses from the per-sample seeds.

    Generation is a pure function of the master seed, so anchors dropped
    by the on-disk format can be rebuilt for persistence-baseline scoring.
    """
    n_steps = meta.n_prior + meta.l_max
    out = np.empty((len(indices), meta.pose_dim))
    for row, idx in enumerate(indices):
        traj = sample_trajectory(
            derive_seed(meta.master_seed, int(idx), _STREAM_TRAJECTORY),
            n_steps, mobility, layout)
        out[row] = encode_pose(traj.poses[meta.n_prior - 1], meta.yaw_mode)
    return out


def split_indices(n_samples: int, train_fraction: float, master_seed: int):
    rng = np.random.default_rng(derive_seed(master_seed, _STREAM_SPLIT))
    perm = rng.permutation(n_samples)
    n_train = int(round(train_fraction * n_samples))
    n_train = min(max(n_train, 1), n_samples - 1)
    return perm[:n_train], perm[n_train:]


def _label_stats(train_labels: np.ndarray):
    flat = train_labels.reshape(-1, train_labels.shape[-1])
    offset = flat.min(axis=0)
    scale = flat.max(axis=0) - offset
    # constant dimensions (e.g. fixed carry height) keep an invertible map
    scale = np.where(scale < _SCALE_EPS, 1.0, scale)
    return offset, scale


def build_dataset(n_samples: int, master_seed: int, config: DatasetConfig,
                  mobility: MobilityConfig, layout: RoomLayout,
                  geom: DeviceGeometry = DeviceGeometry(),
                  config_fingerprint: str = "") -> Dataset:
    """Generate n_samples seeded samples and fit normalization statistics
    on the training partition."""
    if n_samples < 10:
        raise ValueError("n_samples must be >= 10 for meaningful statistics")
    features = np.empty((n_samples, config.n_prior, layout.n_aps))
    labels = np.empty((n_samples, config.l_max, config.pose_dim))
    anchors = np.empty((n_samples, config.pose_dim))
    for i in range(n_samples):
        s = generate_sample((master_seed, i), config, mobility, layout, geom)
        features[i], labels[i], anchors[i] = s.features, s.labels, s.anchor

    train_idx, _ = split_indices(n_samples, config.train_fraction, master_seed)
    flat = features[train_idx].reshape(-1, layout.n_aps)
    f_mean = flat.mean(axis=0)
    f_scale = flat.std(axis=0)
    f_scale = np.where(f_scale < _SCALE_EPS, 1.0, f_scale)
    l_offset, l_scale = _label_stats(labels[train_idx])

    meta = DatasetMeta(
        m_aps=layout.n_aps, n_prior=config.n_prior, l_max=config.l_max,
        n_samples=n_samples, snr_floor_db=config.snr_floor_db,
        train_fraction=config.train_fraction, uplink_users=config.uplink_users,
        feature_mode=config.feature_mode, yaw_mode=config.yaw_mode,
        master_seed=master_seed, config_fingerprint=config_fingerprint,
        feature_mean=f_mean, feature_scale=f_scale,
        label_offset=l_offset, label_scale=l_scale)
    return Dataset(features, labels, meta, anchors)


def _check_scales(meta: DatasetMeta):
    if np.any(meta.feature_scale <= 0.0) or np.any(meta.label_scale <= 0.0):
        raise ValueError("normalization scales must be positive")


def normalize_features(features: np.ndarray, meta: DatasetMeta) -> np.ndarray:
    _check_scales(meta)
    return (features - meta.feature_mean) / meta.feature_scale


def normalize_labels(labels: np.ndarray, meta: DatasetMeta) -> np.ndarray:
    _check_scales(meta)
    return (labels - meta.label_offset) / meta.label_scale


def denormalize_labels(labels: np.ndarray, meta: DatasetMeta) -> np.ndarray:
    _check_scales(meta)
    return labels * meta.label_scale + meta.label_offset


def split(dataset: Dataset, fraction: float = None):
    """Deterministic shuffled (train, test) split; disjoint and exhaustive."""
    fraction = dataset.meta.train_fraction if fraction is None else fraction
    if not (0.0 < fraction < 1.0):
        raise ValueError("fraction must lie in (0, 1)")
    tr, te = split_indices(len(dataset), fraction, dataset.meta.master_seed)

    def take(idx):
        return Dataset(dataset.features[idx], dataset.labels[idx], dataset.meta,
                       None if dataset.anchors is None else dataset.anchors[idx])
    return take(tr), take(te)


# ---------------------------------------------------------------------------
# persistence: one structured-text meta file plus one flat numeric record file
# ---------------------------------------------------------------------------

_META_SCALARS = [
    ("format_version", int), ("m_aps", int), ("n_prior", int), ("l_max", int),
    ("n_samples", int), ("snr_floor_db", float), ("train_fraction", float),
    ("uplink_users", int), ("feature_mode", str), ("yaw_mode", str),
    ("master_seed", int), ("config_fingerprint", str), ("data_format", str),
]
_META_VECTORS = ["feature_mean", "feature_scale", "label_offset", "label_scale"]


def _format_floats(values) -> str:
    return " ".join(repr(float(v)) for v in np.asarray(values).ravel())


def save_dataset(dataset: Dataset, stem: str, text: bool = False):
    """Write {stem}.meta and {stem}.dat (float64 LE) or {stem}.csv.

    Record layout: one row per sample, n_prior*m_aps feature values
    followed by l_max*pose_dim label values.
    """
    meta = dataset.meta
    data_format = "csv" if text else "f64le"
    lines = [f"format_version: 1"]
    for key, _ in _META_SCALARS[1:-1]:
        lines.append(f"{key}: {getattr(meta, key)}")
    lines.append(f"data_format: {data_format}")
    for key in _META_VECTORS:
        lines.append(f"{key}: {_format_floats(getattr(meta, key))}")
    with open(f"{stem}.meta", "w") as fh:
        fh.write("\n".join(lines) + "\n")

    q = len(dataset)
    rows = np.hstack([dataset.features.reshape(q, -1),
                      dataset.labels.reshape(q, -1)])
    if text:
        with open(f"{stem}.csv", "w") as fh:
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
    else:
        with open(f"{stem}.dat", "wb") as fh:
            fh.write(np.ascontiguousarray(rows, dtype="<f8").tobytes())


def _parse_meta(path: str) -> dict:
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if ":" not in line:
                raise DatasetFormatError(
                    f"{path}: line {lineno}: expected 'key: value'")
            key, _, val = line.partition(":")
            values[key.strip()] = (val.strip(), lineno)
    out = {}
    for key, typ in _META_SCALARS:
        if key not in values:
            raise DatasetFormatError(f"{path}: missing key '{key}'")
        raw, lineno = values.pop(key)
        try:
            out[key] = typ(raw)
        except ValueError:
            raise DatasetFormatError(
                f"{path}: line {lineno}: cannot parse '{key}' as {typ.__name__}")
    for key in _META_VECTORS:
        if key not in values:
            raise DatasetFormatError(f"{path}: missing key '{key}'")
        raw, lineno = values.pop(key)
        try:
            out[key] = np.array([float(v) for v in raw.split()])
        except ValueError:
            raise DatasetFormatError(
                f"{path}: line {lineno}: cannot parse '{key}' as float vector")
    if values:
        stray = sorted(values)[0]
        raise DatasetFormatError(
            f"{path}: line {values[stray][1]}: unknown key '{stray}'")
    return out


def load_dataset(stem: str) -> Dataset:
    """Read a dataset file pair; anchors are not stored and come back None."""
    raw = _parse_meta(f"{stem}.meta")
    if raw.pop("format_version") != 1:
        raise DatasetFormatError(f"{stem}.meta: unsupported format_version")
    data_format = raw.pop("data_format")
    meta = DatasetMeta(**raw)
    pose_dim = meta.pose_dim
    if meta.label_offset.shape[0] != pose_dim or meta.label_scale.shape[0] != pose_dim:
        raise DatasetFormatError(
            f"{stem}.meta: label statistics must have {pose_dim} entries")
    if meta.feature_mean.shape[0] != meta.m_aps or meta.feature_scale.shape[0] != meta.m_aps:
        raise DatasetFormatError(
            f"{stem}.meta: feature statistics must have m_aps = {meta.m_aps} entries")

    row_len = meta.n_prior * meta.m_aps + meta.l_max * pose_dim
    if data_format == "f64le":
        path = f"{stem}.dat"
        with open(path, "rb") as fh:
            buf = fh.read()
        if len(buf) % 8 != 0:
            raise DatasetFormatError(f"{path}: size is not a whole number of float64s")
        flat = np.frombuffer(buf, dtype="<f8")
        if flat.size != meta.n_samples * row_len:
            raise DatasetFormatError(
                f"{path}: expected {meta.n_samples} records of {row_len} values, "
                f"found {flat.size / row_len:g} records")
        rows = flat.reshape(meta.n_samples, row_len)
    elif data_format == "csv":
        path = f"{stem}.csv"
        rows = []
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                parts = line.strip().split(",")
                if len(parts) != row_len:
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: expected {row_len} values, "
                        f"found {len(parts)}")
                try:
                    rows.append([float(v) for v in parts])
                except ValueError:
                    raise DatasetFormatError(
                        f"{path}: line {lineno}: non-numeric value")
        if len(rows) != meta.n_samples:
            raise DatasetFormatError(
                f"{path}: expected {meta.n_samples} records, found {len(rows)}")
        rows = np.array(rows)
    else:
        raise DatasetFormatError(f"{stem}.meta: unknown data_format '{data_format}'")

    n_feat = meta.n_prior * meta.m_aps
    features = rows[:, :n_feat].reshape(meta.n_samples, meta.n_prior, meta.m_aps)
    labels = rows[:, n_feat:].reshape(meta.n_samples, meta.l_max, pose_dim)
    return Dataset(features.copy(), labels.copy(), meta, None)


def config_fingerprint(pairs) -> str:
    """Stable hash of resolved configuration key/value pairs."""
    canon = "\n".join(f"{k}={v}" for k, v in sorted(pairs))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]
