"""Random-waypoint walks with per-step random device orientation.

Users walk between uniformly drawn waypoints on the floor rectangle
(inset from the walls) at constant speed and fixed height. At every
time slot the device orientation is resampled: yaw follows the walking
heading plus Gaussian jitter, pitch and roll are Gaussian around a
typical handheld carry angle.
"""

from dataclasses import dataclass
from typing import List

import numpy as np

from .channel import RoomLayout
from .geometry import Pose, clamp_half_open, wrap_yaw


@dataclass
class MobilityConfig:
    speed: float = 1.0            # m/s
    slot_duration: float = 0.5    # s
    ue_height: float = 1.2        # m
    wall_margin: float = 0.1      # m
    yaw_jitter_std: float = 10.0  # deg
    pitch_mean: float = 40.0      # deg
    pitch_std: float = 7.0        # deg
    roll_mean: float = 0.0        # deg
    roll_std: float = 4.0         # deg
    pause_probability: float = 0.0

    def __post_init__(self):
        if self.speed <= 0:
            raise ValueError("speed must be positive")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be positive")
        if not (0.0 <= self.pause_probability < 1.0):
            raise ValueError("pause_probability must lie in [0, 1)")


@dataclass
class Trajectory:
    """One pose per time slot."""

    poses: List[Pose]

    def __len__(self) -> int:
        return len(self.poses)

    def __getitem__(self, idx):
        return self.poses[idx]

    def positions(self) -> np.ndarray:
        return np.array([p.position for p in self.poses])


def step_orientation(rng: np.random.Generator, heading: float,
                     config: MobilityConfig):
    """Draw one (yaw, pitch, roll) triple given the walking heading in degrees."""
    alpha = wrap_yaw(heading + rng.normal(0.0, config.yaw_jitter_std))
    beta = clamp_half_open(rng.normal(config.pitch_mean, config.pitch_std),
                           -180.0, 180.0)
    gamma = clamp_half_open(rng.normal(config.roll_mean, config.roll_std),
                            -90.0, 90.0)
    return alpha, beta, gamma


def _heading_deg(from_xy: np.ndarray, to_xy: np.ndarray) -> float:
    d = to_xy - from_xy
    return wrap_yaw(np.degrees(np.arctan2(d[1], d[0])))


def sample_trajectory(seed, n_steps: int, config: MobilityConfig,
                      layout: RoomLayout) -> Trajectory:
    """Seeded random-waypoint walk of n_steps slots inside the layout floor."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if not (0.0 <= config.ue_height <= layout.height):
        raise ValueError("ue_height must lie inside the room")
    rng = np.random.default_rng(seed)
    lo = np.array([config.wall_margin, config.wall_margin])
    hi = np.array([layout.length - config.wall_margin,
                   layout.width - config.wall_margin])
    if np.any(hi <= lo):
        raise ValueError("wall_margin leaves no walkable floor area")

    step_len = config.speed * config.slot_duration
    pos = rng.uniform(lo, hi)
    waypoint = rng.uniform(lo, hi)
    heading = _heading_deg(pos, waypoint)

    poses = []
    for _ in range(n_steps):
        alpha, beta, gamma = step_orientation(rng, heading, config)
        poses.append(Pose(pos[0], pos[1], config.ue_height, alpha, beta, gamma))

        if config.pause_probability > 0.0 and rng.random() < config.pause_probability:
            continue
        remaining = np.linalg.norm(waypoint - pos)
        if remaining <= step_len:
            pos = waypoint.copy()
            while True:
                waypoint = rng.uniform(lo, hi)
                if np.linalg.norm(waypoint - pos) > 1e-9:
                    break
        else:
            pos = pos + (waypoint - pos) / remaining * step_len
        heading = _heading_deg(pos, waypoint)
    return Trajectory(poses)


def frozen_trajectory(seed, n_steps: int, config: MobilityConfig,
                      layout: RoomLayout) -> Trajectory:
    """Trajectory whose first pose is repeated for every slot (static user)."""
    first = sample_trajectory(seed, 1, config, layout).poses[0]
    return Trajectory([first] * n_steps)
