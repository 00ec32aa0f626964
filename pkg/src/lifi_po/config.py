"""Configuration file handling for the simulation harness.

One structured text file configures every stage; sections group keys by
subsystem and all keys are optional with documented defaults (see
docs/config.md). Unknown keys are rejected with the nearest valid
spelling so typos cannot silently fall back to defaults.
"""

import configparser
import difflib
from dataclasses import dataclass, field, fields

import numpy as np

from .channel import RoomLayout, square_ap_grid
from .dataset import DatasetConfig, config_fingerprint
from .geometry import DeviceGeometry
from .lstm import TrainConfig
from .mobility import MobilityConfig
from .precoder import CcpOptions


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    """Monte-Carlo settings for the proactive-optimization experiments."""

    k_users: int = 4
    posterior_step: int = 2       # slots of look-ahead (and of solver budget)
    n_slots: int = 500            # independent paired trials
    sweep_slots: int = 100        # trials per point in the K / QoS sweeps
    r_th: float = 1.0             # nats/s/Hz
    seed: int = 0
    freeze_mobility: bool = False
    k_sweep: tuple = (2, 4, 6, 8)
    rth_sweep: tuple = (0.5, 1.0, 1.5, 2.0)
    reference_starts: int = 50    # multi-start budget of the reference solver
    timing_slots: int = 30

    def __post_init__(self):
        if self.posterior_step < 1:
            raise ValueError("posterior_step must be >= 1")
        if self.k_users < 1:
            raise ValueError("k_users must be >= 1")


@dataclass
class PathsConfig:
    dataset_stem: str = "dataset"
    model_stem: str = "model"


@dataclass
class AppConfig:
    layout: RoomLayout = field(default_factory=RoomLayout)
    geom: DeviceGeometry = field(default_factory=DeviceGeometry)
    mobility: MobilityConfig = field(default_factory=MobilityConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    solver: CcpOptions = field(default_factory=CcpOptions)
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    hidden_size: int = 100


# section -> (target dataclass attribute on AppConfig, {key: parser})
def _num(s): return float(s)
def _int(s): return int(s)
def _str(s): return s
def _bool(s):
    v = s.strip().lower()
    if v in ("true", "yes", "on", "1"):
        return True
    if v in ("false", "no", "off", "0"):
        return False
    raise ValueError(f"not a boolean: {s}")
def _int_list(s): return tuple(int(v) for v in s.replace(",", " ").split())
def _num_list(s): return tuple(float(v) for v in s.replace(",", " ").split())


_SCHEMA = {
    "layout": {
        "length": _num, "width": _num, "height": _num, "ap_grid": _int,
        "led_half_power_angle": _num, "pd_area": _num, "pd_fov": _num,
        "pd_responsivity": _num, "optical_filter_gain": _num,
        "concentrator_gain": _num, "noise_psd": _num, "bandwidth": _num,
        "dc_bias": _num, "amplitude_headroom": _num, "wall_reflectance": _num,
        "nlos_enabled": _bool, "nlos_patch_size": _num,
    },
    "device": {"offset_x": _num, "offset_y": _num, "offset_z": _num},
    "mobility": {
        "speed": _num, "slot_duration": _num, "ue_height": _num,
        "wall_margin": _num, "yaw_jitter_std": _num, "pitch_mean": _num,
        "pitch_std": _num, "roll_mean": _num, "roll_std": _num,
        "pause_probability": _num,
    },
    "dataset": {
        "n_prior": _int, "l_max": _int, "n_samples": _int,
        "snr_floor_db": _num, "train_fraction": _num, "uplink_users": _int,
        "feature_mode": _str, "yaw_mode": _str, "feature_noise_std": _num,
    },
    "train": {
        "learning_rate": _num, "batch_size": _int, "epochs": _int,
        "beta1": _num, "beta2": _num, "clip_norm": _num,
        "validation_fraction": _num, "seed": _int, "lr_decay": _num,
        "hidden_size": _int,
    },
    "solver": {"max_iter": _int, "tol": _num, "n_starts": _int, "seed": _int},
    "scenario": {
        "k_users": _int, "posterior_step": _int, "n_slots": _int,
        "sweep_slots": _int, "r_th": _num, "seed": _int,
        "freeze_mobility": _bool, "k_sweep": _int_list, "rth_sweep": _num_list,
        "reference_starts": _int, "timing_slots": _int,
    },
    "paths": {"dataset_stem": _str, "model_stem": _str},
}


def _suggest(name: str, candidates) -> str:
    match = difflib.get_close_matches(name, list(candidates), n=1)
    return f"; nearest valid: '{match[0]}'" if match else ""


def _parse_file(path: str) -> dict:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        with open(path) as fh:
            parser.read_file(fh, source=path)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except configparser.Error as err:
        raise ConfigError(f"cannot parse {path}: {err}")
    values = {}
    for section in parser.sections():
        if section not in _SCHEMA:
            raise ConfigError(
                f"{path}: unknown section '[{section}]'"
                + _suggest(section, _SCHEMA))
        for key, raw in parser.items(section):
            schema = _SCHEMA[section]
            if key not in schema:
                raise ConfigError(
                    f"{path}: unknown key '{key}' in [{section}]"
                    + _suggest(key, schema))
            try:
                values[(section, key)] = schema[key](raw)
            except ValueError as err:
                raise ConfigError(f"{path}: bad value for {section}.{key}: {err}")
    return values


def load_config(path: str = None) -> AppConfig:
    """Resolve a config file (or pure defaults when path is None)."""
    values = _parse_file(path) if path is not None else {}

    def section(name):
        return {k: v for (s, k), v in values.items() if s == name}

    lay = section("layout")
    grid = lay.pop("ap_grid", 4)
    layout_kwargs = dict(lay)
    layout = RoomLayout(
        ap_positions=square_ap_grid(lay.get("length", 5.0), lay.get("width", 5.0),
                                    lay.get("height", 3.0), grid),
        **layout_kwargs)

    dev = section("device")
    geom = DeviceGeometry((dev.get("offset_x", 0.0), dev.get("offset_y", 0.06),
                           dev.get("offset_z", 0.0)))

    train_kwargs = section("train")
    hidden = train_kwargs.pop("hidden_size", 100)
    train = TrainConfig(**train_kwargs)

    return AppConfig(
        layout=layout, geom=geom,
        mobility=MobilityConfig(**section("mobility")),
        dataset=DatasetConfig(**section("dataset")),
        train=train,
        solver=CcpOptions(**section("solver")),
        scenario=ScenarioConfig(**section("scenario")),
        paths=PathsConfig(**section("paths")),
        hidden_size=hidden)


def fingerprint(config: AppConfig) -> str:
    """Hash of the fully resolved configuration, for run manifests."""
    pairs = []
    for section_name in ("mobility", "dataset", "train", "solver", "scenario"):
        obj = getattr(config, section_name)
        for f in fields(obj):
            pairs.append((f"{section_name}.{f.name}", repr(getattr(obj, f.name))))
    for f in fields(config.layout):
        val = getattr(config.layout, f.name)
        if isinstance(val, np.ndarray):
            val = np.array2string(val, precision=10)
        pairs.append((f"layout.{f.name}", repr(val)))
    pairs.append(("device.offset", repr(tuple(config.geom.offset))))
    pairs.append(("hidden_size", repr(config.hidden_size)))
    return config_fingerprint(pairs)
