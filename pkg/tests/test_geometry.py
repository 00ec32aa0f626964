import numpy as np
import pytest

from lifi_po.geometry import (DeviceGeometry, Pose, angle_abs_diff,
                              clamp_half_open, front_end_position,
                              rotation_matrix, ue_normal, wrap_pitch, wrap_yaw)


def test_identity_rotation():
    np.testing.assert_allclose(rotation_matrix(0, 0, 0), np.eye(3), atol=1e-15)


def test_quarter_yaw_maps_x_to_y():
    out = rotation_matrix(90, 0, 0) @ np.array([1.0, 0.0, 0.0])
    np.testing.assert_allclose(out, [0.0, 1.0, 0.0], atol=1e-12)


def test_orthonormality_random_angles():
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(1000):
        r = rotation_matrix(rng.uniform(0, 360), rng.uniform(-180, 180),
                            rng.uniform(-90, 90))
        worst = max(worst, np.abs(r @ r.T - np.eye(3)).max())
        assert abs(np.linalg.det(r) - 1.0) < 1e-12
    assert worst < 1e-12


def test_rest_normal_faces_ceiling():
    np.testing.assert_allclose(ue_normal(Pose(1, 1, 1, 0, 0, 0)), [0, 0, 1],
                               atol=1e-15)


def test_pitch_180_flips_normal():
    np.testing.assert_allclose(ue_normal(Pose(1, 1, 1, 0, 180, 0)), [0, 0, -1],
                               atol=1e-12)


def test_normal_is_unit_for_any_pose():
    rng = np.random.default_rng(1)
    for _ in range(200):
        p = Pose(1, 1, 1, rng.uniform(0, 360), rng.uniform(-180, 180),
                 rng.uniform(-90, 90))
        assert abs(np.linalg.norm(ue_normal(p)) - 1.0) < 1e-12


def test_front_end_offset_rotates_with_pose():
    geom = DeviceGeometry()
    flat = front_end_position(Pose(2, 2, 1, 0, 0, 0), geom)
    np.testing.assert_allclose(flat, [2.0, 2.06, 1.0], atol=1e-15)
    yawed = front_end_position(Pose(2, 2, 1, 90, 0, 0), geom)
    np.testing.assert_allclose(yawed, [1.94, 2.0, 1.0], atol=1e-12)


def test_device_offset_magnitude_limit():
    with pytest.raises(ValueError):
        DeviceGeometry((0.0, 0.25, 0.0))


def test_wrap_helpers():
    assert wrap_yaw(370.0) == pytest.approx(10.0)
    assert wrap_yaw(-5.0) == pytest.approx(355.0)
    assert 0.0 <= wrap_yaw(360.0) < 360.0
    assert wrap_pitch(190.0) == pytest.approx(-170.0)
    assert -180.0 <= wrap_pitch(180.0) < 180.0
    assert clamp_half_open(95.0, -90.0, 90.0) < 90.0
    assert clamp_half_open(-95.0, -90.0, 90.0) == -90.0


def test_angle_abs_diff_wraps():
    assert angle_abs_diff(359.0, 1.0) == pytest.approx(2.0)
    assert angle_abs_diff(10.0, 350.0) == pytest.approx(20.0)
    np.testing.assert_allclose(angle_abs_diff([0.0, 180.0], [350.0, -170.0]),
                               [10.0, 10.0])
