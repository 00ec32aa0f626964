"""Pose representation and rigid-body orientation math for handheld devices.

A device pose is a 3D position inside the room plus three elemental
rotation angles: yaw (about the room Z axis), pitch (about the device
X axis) and roll (about the device Y axis). Rotations are composed as

    R = Rz(yaw) @ Rx(pitch) @ Ry(roll)

and applied to the rest frame, in which the device lies flat with its
screen normal pointing straight up at (0, 0, 1).
"""

from dataclasses import dataclass, field

import numpy as np

YAW_RANGE = (0.0, 360.0)       # [0, 360)
PITCH_RANGE = (-180.0, 180.0)  # [-180, 180)
ROLL_RANGE = (-90.0, 90.0)     # [-90, 90)


class GeometryError(ValueError):
    """Degenerate or out-of-domain geometry (coincident devices, pose outside room)."""


@dataclass(frozen=True)
class Pose:
    """Position in meters (room frame) and orientation angles in degrees."""

    x: float
    y: float
    z: float
    alpha: float  # yaw, [0, 360)
    beta: float   # pitch, [-180, 180)
    gamma: float  # roll, [-90, 90)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @property
    def angles(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma])


@dataclass(frozen=True)
class DeviceGeometry:
    """Offset of the optical front end (LED/PD pair) from the hand position.

    The offset is expressed in the device frame; the default places the
    front end 6 cm along the device +y axis of the screen plane.
    """

    offset: tuple = (0.0, 0.06, 0.0)

    def __post_init__(self):
        if float(np.linalg.norm(self.offset)) >= 0.2:
            raise ValueError("device offset magnitude must be < 0.2 m")

    @property
    def offset_vector(self) -> np.ndarray:
        return np.asarray(self.offset, dtype=float)


def rotation_matrix(alpha: float, beta: float, gamma: float) -> np.ndarray:
    """Orientation matrix R = Rz(alpha) @ Rx(beta) @ Ry(gamma), angles in degrees.

    Orthonormal with det +1 for any angle triple.
    """
    a, b, g = np.radians([alpha, beta, gamma])
    ca, sa = np.cos(a), np.sin(a)
    cb, sb = np.cos(b), np.sin(b)
    cg, sg = np.cos(g), np.sin(g)
    rz = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    rx = np.array([[1.0, 0.0, 0.0], [0.0, cb, -sb], [0.0, sb, cb]])
    ry = np.array([[cg, 0.0, sg], [0.0, 1.0, 0.0], [-sg, 0.0, cg]])
    return rz @ rx @ ry


def ue_normal(pose: Pose) -> np.ndarray:
    """Unit normal of the device screen, (0, 0, 1) rotated by the pose angles."""
    return rotation_matrix(pose.alpha, pose.beta, pose.gamma)[:, 2]


def front_end_position(pose: Pose, geom: DeviceGeometry) -> np.ndarray:
    """Room-frame position of the device's LED/PD pair."""
    r = rotation_matrix(pose.alpha, pose.beta, pose.gamma)
    return pose.position + r @ geom.offset_vector


def wrap_yaw(deg: float) -> float:
    """Wrap an angle into [0, 360)."""
    return float(np.mod(deg, 360.0))


def wrap_pitch(deg: float) -> float:
    """Wrap an angle into [-180, 180)."""
    return float(np.mod(deg + 180.0, 360.0) - 180.0)


def clamp_half_open(value: float, lo: float, hi: float) -> float:
    """Clamp into [lo, hi); the upper bound maps to the float just below it."""
    return float(min(max(value, lo), np.nextafter(hi, lo)))


def angle_abs_diff(a, b, period: float = 360.0):
    """Wrapped absolute angular difference, in degrees."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float), period)
    return np.minimum(d, period - d)
