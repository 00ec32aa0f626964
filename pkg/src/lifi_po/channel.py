"""Indoor optical wireless channel: Lambertian LOS gains, first-reflection
NLOS gains, per-AP channel vectors, and uplink reference-signal SNR.

LOS model (generalized Lambertian emitter, bare photodiode with an
optical filter and an idealized concentrator):

    gain = Rp * Tf * Gc * (m + 1) * A_pd / (2 pi d^2) * cos^m(phi) * cos(psi)

with emission angle phi at the transmitter, incidence angle psi at the
receiver, Lambertian order m = -ln 2 / ln cos(half-power angle), and
gain forced to 0 whenever either device faces away or psi exceeds the
photodiode field of view.

The NLOS term is a single wall reflection: each wall is tiled with
square patches that receive light like a bare detector and re-emit it
as an order-1 Lambertian source scaled by the wall reflectance.

Uplink SNR of the DC reference signal follows

    r = g^2 * I_dc^2 / sigma_u^2,    sigma_u^2 = N0 * B / K

where the bandwidth is split evenly over the K active devices.
"""

from dataclasses import dataclass, field

import numpy as np

from .geometry import DeviceGeometry, GeometryError, Pose, front_end_position, ue_normal

MIN_LINK_DISTANCE = 1e-3  # m; closer transmitter/receiver pairs signal a simulation bug


def square_ap_grid(length: float, width: float, height: float, per_side: int = 4) -> np.ndarray:
    """Ceiling AP positions on the vertices of a centred square lattice."""
    xs = (np.arange(per_side) + 0.5) * (length / per_side)
    ys = (np.arange(per_side) + 0.5) * (width / per_side)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    pos = np.column_stack([gx.ravel(), gy.ravel(), np.full(per_side * per_side, height)])
    return pos


@dataclass
class RoomLayout:
    """Room geometry, AP placement and opto-electronic device parameters."""

    length: float = 5.0
    width: float = 5.0
    height: float = 3.0
    ap_positions: np.ndarray = None  # (M, 3), filled with a 4x4 grid when omitted
    ap_normals: np.ndarray = None    # (M, 3), defaults to straight down
    led_half_power_angle: float = 60.0  # deg
    pd_area: float = 1e-4               # m^2
    pd_fov: float = 85.0                # deg
    pd_responsivity: float = 1.0        # A/W
    optical_filter_gain: float = 1.0
    concentrator_gain: float = 1.0
    noise_psd: float = 1e-21  # A^2/Hz
    bandwidth: float = 2e7    # Hz
    dc_bias: float = 0.5      # A
    amplitude_headroom: float = 0.075  # A per AP, for downlink precoding
    wall_reflectance: float = 0.8
    nlos_enabled: bool = False
    nlos_patch_size: float = 0.5  # m

    def __post_init__(self):
        if self.ap_positions is None:
            self.ap_positions = square_ap_grid(self.length, self.width, self.height)
        self.ap_positions = np.atleast_2d(np.asarray(self.ap_positions, dtype=float))
        if self.ap_normals is None:
            self.ap_normals = np.tile([0.0, 0.0, -1.0], (self.n_aps, 1))
        self.ap_normals = np.atleast_2d(np.asarray(self.ap_normals, dtype=float))
        if self.n_aps < 1:
            raise ValueError("layout needs at least one AP")
        if self.ap_normals.shape != self.ap_positions.shape:
            raise ValueError("ap_normals shape must match ap_positions")
        if not np.allclose(self.ap_positions[:, 2], self.height):
            raise ValueError("all APs must sit on the ceiling plane")
        if not (0.0 < self.led_half_power_angle < 90.0):
            raise ValueError("led_half_power_angle must lie in (0, 90) deg")
        if not (0.0 < self.pd_fov <= 90.0):
            raise ValueError("pd_fov must lie in (0, 90] deg")
        if not (0.0 <= self.wall_reflectance < 1.0):
            raise ValueError("wall_reflectance must lie in [0, 1)")
        if self.amplitude_headroom <= 0.0:
            raise ValueError("amplitude_headroom must be positive")

    @property
    def n_aps(self) -> int:
        return self.ap_positions.shape[0]

    @property
    def noise_term(self) -> float:
        """Downlink receiver noise variance N0 * B, in A^2."""
        return self.noise_psd * self.bandwidth

    def contains(self, pose: Pose) -> bool:
        return (
            0.0 <= pose.x <= self.length
            and 0.0 <= pose.y <= self.width
            and 0.0 <= pose.z <= self.height
        )


def lambertian_order(half_power_angle_deg: float) -> float:
    """Directivity exponent m = -ln 2 / ln cos(half-power angle)."""
    return -np.log(2.0) / np.log(np.cos(np.radians(half_power_angle_deg)))


def _lambertian_gain(tx_pos, tx_normal, rx_pos, rx_normal, m_order, pd_area,
                     fov_deg, gain_product):
    """Broadcasting LOS gain core; inputs are (..., 3) arrays."""
    tx_pos = np.asarray(tx_pos, dtype=float)
    rx_pos = np.asarray(rx_pos, dtype=float)
    vec = rx_pos - tx_pos
    d = np.linalg.norm(vec, axis=-1)
    if np.any(d < MIN_LINK_DISTANCE):
        raise GeometryError(
            f"transmitter/receiver separation below {MIN_LINK_DISTANCE} m "
            "(coincident devices)"
        )
    unit = vec / d[..., None]
    cos_phi = np.sum(np.asarray(tx_normal, dtype=float) * unit, axis=-1)
    cos_psi = np.sum(np.asarray(rx_normal, dtype=float) * (-unit), axis=-1)
    cos_fov = np.cos(np.radians(fov_deg))
    visible = (cos_phi > 0.0) & (cos_psi > 0.0) & (cos_psi >= cos_fov)
    base = (m_order + 1.0) * pd_area / (2.0 * np.pi * d**2)
    gain = gain_product * base * np.where(visible, cos_phi, 0.0) ** m_order \
        * np.where(visible, cos_psi, 0.0)
    return np.where(visible, gain, 0.0)


def los_gain(tx_pos, tx_normal, rx_pos, rx_normal, half_power_angle_deg: float,
             pd_area: float, fov_deg: float, responsivity: float = 1.0,
             filter_gain: float = 1.0, concentrator_gain: float = 1.0) -> float:
    """Line-of-sight Lambertian channel gain between one emitter and one detector.

    Zero outside the detector field of view or behind either device plane.
    Raises GeometryError for coincident devices.
    """
    m = lambertian_order(half_power_angle_deg)
    g = _lambertian_gain(tx_pos, tx_normal, rx_pos, rx_normal, m, pd_area,
                         fov_deg, responsivity * filter_gain * concentrator_gain)
    return float(g) if np.ndim(g) == 0 else g


def _wall_patches(layout: RoomLayout):
    """Patch centres, inward normals and areas tiling the four walls."""
    size = layout.nlos_patch_size
    centres, normals, areas = [], [], []
    walls = [
        # (fixed axis, fixed value, inward normal, u axis, u extent)
        (0, 0.0, (1.0, 0.0, 0.0), 1, layout.width),
        (0, layout.length, (-1.0, 0.0, 0.0), 1, layout.width),
        (1, 0.0, (0.0, 1.0, 0.0), 0, layout.length),
        (1, layout.width, (0.0, -1.0, 0.0), 0, layout.length),
    ]
    for axis, value, normal, u_axis, u_extent in walls:
        nu = max(1, int(np.ceil(u_extent / size)))
        nz = max(1, int(np.ceil(layout.height / size)))
        du, dz = u_extent / nu, layout.height / nz
        us = (np.arange(nu) + 0.5) * du
        zs = (np.arange(nz) + 0.5) * dz
        gu, gz = np.meshgrid(us, zs, indexing="ij")
        pts = np.zeros((nu * nz, 3))
        pts[:, axis] = value
        pts[:, u_axis] = gu.ravel()
        pts[:, 2] = gz.ravel()
        centres.append(pts)
        normals.append(np.tile(normal, (nu * nz, 1)))
        areas.append(np.full(nu * nz, du * dz))
    return np.vstack(centres), np.vstack(normals), np.concatenate(areas)


def nlos_first_reflection_gain(tx_pos, tx_normal, rx_pos, rx_normal,
                               layout: RoomLayout, tx_half_power_deg: float,
                               rx_area: float, rx_fov_deg: float,
                               rx_gain_product: float = 1.0) -> float:
    """Single-bounce wall contribution, summed over Lambertian wall patches.

    Each patch collects light like a bare detector of its own area and
    re-emits it as an order-1 Lambertian source scaled by the wall
    reflectance. Converges as the patch size shrinks.
    """
    if layout.wall_reflectance == 0.0:
        return 0.0
    centres, normals, areas = _wall_patches(layout)
    m_tx = lambertian_order(tx_half_power_deg)
    to_patch = _lambertian_gain(tx_pos, tx_normal, centres, normals, m_tx,
                                1.0, 90.0, 1.0) * areas
    from_patch = _lambertian_gain(centres, normals, rx_pos, rx_normal, 1.0,
                                  rx_area, rx_fov_deg, rx_gain_product)
    return float(layout.wall_reflectance * np.sum(to_patch * from_patch))


def downlink_channel(pose: Pose, layout: RoomLayout,
                     geom: DeviceGeometry = DeviceGeometry()) -> np.ndarray:
    """Per-AP downlink gain vector: ceiling LEDs to the device photodiode."""
    if not layout.contains(pose):
        raise GeometryError(f"pose position {tuple(pose.position)} outside the room")
    pd_pos = front_end_position(pose, geom)
    pd_normal = ue_normal(pose)
    gain_product = (layout.pd_responsivity * layout.optical_filter_gain
                    * layout.concentrator_gain)
    m = lambertian_order(layout.led_half_power_angle)
    gains = _lambertian_gain(layout.ap_positions, layout.ap_normals, pd_pos,
                             pd_normal, m, layout.pd_area, layout.pd_fov,
                             gain_product)
    if layout.nlos_enabled:
        gains = gains + np.array([
            nlos_first_reflection_gain(ap, nrm, pd_pos, pd_normal, layout,
                                       layout.led_half_power_angle,
                                       layout.pd_area, layout.pd_fov,
                                       gain_product)
            for ap, nrm in zip(layout.ap_positions, layout.ap_normals)
        ])
    return gains


def uplink_channel(pose: Pose, layout: RoomLayout,
                   geom: DeviceGeometry = DeviceGeometry()) -> np.ndarray:
    """Per-AP uplink gain vector: device IR LED to the ceiling photodiodes.

    The device LED shares the photodiode's position and normal; LED and
    PD parameters are taken symmetric on both ends of the link.
    """
    if not layout.contains(pose):
        raise GeometryError(f"pose position {tuple(pose.position)} outside the room")
    led_pos = front_end_position(pose, geom)
    led_normal = ue_normal(pose)
    gain_product = (layout.pd_responsivity * layout.optical_filter_gain
                    * layout.concentrator_gain)
    m = lambertian_order(layout.led_half_power_angle)
    gains = _lambertian_gain(led_pos, led_normal, layout.ap_positions,
                             layout.ap_normals, m, layout.pd_area,
                             layout.pd_fov, gain_product)
    if layout.nlos_enabled:
        gains = gains + np.array([
            nlos_first_reflection_gain(led_pos, led_normal, ap, nrm, layout,
                                       layout.led_half_power_angle,
                                       layout.pd_area, layout.pd_fov,
                                       gain_product)
            for ap, nrm in zip(layout.ap_positions, layout.ap_normals)
        ])
    return gains


def uplink_snr(gain, dc_bias: float, n_users: int, noise_psd: float, bandwidth: float):
    """Reference-signal SNR g^2 * I_dc^2 * K / (N0 * B), linear scale."""
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    if bandwidth <= 0 or noise_psd <= 0:
        raise ValueError("noise_psd and bandwidth must be positive")
    g = np.asarray(gain, dtype=float)
    snr = g**2 * dc_bias**2 * n_users / (noise_psd * bandwidth)
    return float(snr) if np.ndim(snr) == 0 else snr
