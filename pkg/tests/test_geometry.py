import numpy as np
import pytest

from msfusion.domains.geometry.exceptions import NonUnitQuaternion
from msfusion.domains.geometry.quaternion import (
    normalize_quaternion,
    quat_to_rotation,
    rotation_to_quat,
)
from msfusion.domains.geometry.schemas import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    NormalMap,
    PointCloud,
)
from msfusion.domains.geometry.service import (
    pose_apply,
    pose_compose,
    pose_inverse,
    rotate_vectors,
)

SQRT_HALF = np.sqrt(0.5)


def rodrigues(q):
    """Axis-angle rotation of a unit quaternion, computed independently."""
    w, x, y, z = q
    angle = 2.0 * np.arctan2(np.linalg.norm([x, y, z]), w)
    if np.isclose(angle, 0.0):
        return np.eye(3)
    axis = np.array([x, y, z]) / np.linalg.norm([x, y, z])
    k = np.array(
        [[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]]
    )
    return np.eye(3) + np.sin(angle) * k + (1 - np.cos(angle)) * k @ k


def random_pose(rng, scale=1.0):
    q = rng.normal(size=4)
    return CameraPose(
        quaternion=q / np.linalg.norm(q), translation=rng.normal(size=3), scale=scale
    )


# ==================== QUATERNIONS ====================


def test_identity_quaternion():
    np.testing.assert_array_equal(quat_to_rotation((1, 0, 0, 0)), np.eye(3))


def test_quarter_turn_about_z():
    expected = [[0, -1, 0], [1, 0, 0], [0, 0, 1]]
    np.testing.assert_allclose(
        quat_to_rotation((SQRT_HALF, 0, 0, SQRT_HALF)), expected, atol=1e-12
    )


def test_third_turn_about_diagonal():
    expected = [[0, 0, 1], [1, 0, 0], [0, 1, 0]]
    np.testing.assert_allclose(
        quat_to_rotation((0.5, 0.5, 0.5, 0.5)), expected, atol=1e-12
    )


def test_matches_axis_angle_on_random_quaternions(rng):
    for _ in range(1000):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        np.testing.assert_allclose(quat_to_rotation(q), rodrigues(q), atol=1e-9)


def test_double_cover_gives_identical_matrices(rng):
    for _ in range(100):
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        np.testing.assert_array_equal(quat_to_rotation(q), quat_to_rotation(-q))


def test_rotation_is_orthonormal(rng):
    q = rng.normal(size=4)
    r = quat_to_rotation(q / np.linalg.norm(q))
    np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(r) == pytest.approx(1.0, abs=1e-12)


def test_near_unit_quaternion_is_renormalized():
    q = normalize_quaternion((1.005, 0.0, 0.0, 0.0))
    np.testing.assert_allclose(q, [1.0, 0.0, 0.0, 0.0])


def test_non_unit_quaternion_is_rejected():
    with pytest.raises(NonUnitQuaternion) as info:
        normalize_quaternion((2.0, 0.0, 0.0, 0.0))
    assert info.value.error_code == "NON_UNIT_QUATERNION"


def test_rotation_to_quat_inverts(rng):
    q = rng.normal(size=4)
    q /= np.linalg.norm(q)
    recovered = rotation_to_quat(quat_to_rotation(q))
    assert recovered[0] >= 0
    np.testing.assert_allclose(
        quat_to_rotation(recovered), quat_to_rotation(q), atol=1e-12
    )


# ==================== POSES ====================


def test_pose_apply_identity():
    np.testing.assert_array_equal(
        pose_apply(CameraPose(), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0]
    )


def test_pose_apply_translation():
    pose = CameraPose(translation=(1.0, 0.0, 0.0))
    np.testing.assert_allclose(pose_apply(pose, [0.0, 0.0, 0.0]), [1.0, 0.0, 0.0])


def test_pose_apply_scale_and_rotation():
    pose = CameraPose(quaternion=(SQRT_HALF, 0, 0, SQRT_HALF), scale=2.0)
    np.testing.assert_allclose(
        pose_apply(pose, [1.0, 0.0, 0.0]), [0.0, 2.0, 0.0], atol=1e-12
    )


def test_pose_apply_batch_matches_single(rng):
    pose = random_pose(rng, scale=1.7)
    points = rng.normal(size=(5, 3))
    batch = pose_apply(pose, points)
    for point, mapped in zip(points, batch):
        np.testing.assert_allclose(pose_apply(pose, point), mapped)


def test_pose_matrix_matches_apply(rng):
    pose = random_pose(rng, scale=0.5)
    point = rng.normal(size=3)
    homogeneous = pose.matrix() @ np.append(point, 1.0)
    np.testing.assert_allclose(homogeneous[:3], pose_apply(pose, point), atol=1e-12)


def test_compose_with_inverse_is_identity(rng):
    for _ in range(20):
        pose = random_pose(rng, scale=rng.uniform(0.2, 5.0))
        identity = pose_compose(pose, pose_inverse(pose))
        np.testing.assert_allclose(identity.rotation, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(identity.t, 0.0, atol=1e-9)
        assert identity.scale == pytest.approx(1.0, abs=1e-12)


def test_compose_applies_right_operand_first(rng):
    a = random_pose(rng, scale=2.0)
    b = random_pose(rng, scale=0.3)
    point = rng.normal(size=3)
    np.testing.assert_allclose(
        pose_apply(pose_compose(a, b), point),
        pose_apply(a, pose_apply(b, point)),
        atol=1e-9,
    )


def test_rotate_vectors_ignores_scale_and_translation():
    pose = CameraPose(
        quaternion=(SQRT_HALF, 0, 0, SQRT_HALF), translation=(5, 5, 5), scale=3.0
    )
    np.testing.assert_allclose(
        rotate_vectors(pose, [1.0, 0.0, 0.0]), [0.0, 1.0, 0.0], atol=1e-12
    )


def test_rigid_drops_scale():
    pose = CameraPose(translation=(1, 2, 3), scale=4.0)
    rigid = pose.rigid()
    assert rigid.scale == 1.0
    assert rigid.translation == pose.translation


def test_non_positive_scale_is_rejected():
    with pytest.raises(ValueError):
        CameraPose(scale=0.0)


# ==================== CAMERAS AND MAPS ====================


def test_principal_point_must_lie_inside():
    with pytest.raises(ValueError):
        CameraIntrinsics(fx=10, fy=10, cx=40, cy=5, width=32, height=24)


def test_project_inverts_ray_directions(small_intrinsics):
    rays = small_intrinsics.ray_directions() * 2.5
    u, v, z = small_intrinsics.project(rays.reshape(-1, 3))
    rows, cols = np.indices(small_intrinsics.shape)
    np.testing.assert_allclose(u, cols.ravel(), atol=1e-9)
    np.testing.assert_allclose(v, rows.ravel(), atol=1e-9)
    np.testing.assert_allclose(z, 2.5)


def test_project_behind_camera_is_nan(small_intrinsics):
    u, v, _ = small_intrinsics.project([[0.0, 0.0, -1.0]])
    assert np.isnan(u[0]) and np.isnan(v[0])


def test_depth_map_rejects_values_on_invalid_pixels():
    with pytest.raises(ValueError):
        DepthMap(depth=np.array([[1.0, 2.0]]), valid=np.array([[True, False]]))


def test_depth_map_from_values_invalidates_bad_depths():
    depth = DepthMap.from_values(np.array([[1.0, -2.0, np.nan, 0.0]]))
    assert depth.valid.tolist() == [[True, False, False, False]]
    assert depth.depth.tolist() == [[1.0, 0.0, 0.0, 0.0]]


def test_containers_are_read_only():
    depth = DepthMap.from_values(np.ones((2, 2)))
    with pytest.raises(ValueError):
        depth.depth[0, 0] = 5.0


def test_normal_map_requires_unit_normals():
    with pytest.raises(ValueError):
        NormalMap(normals=np.full((1, 1, 3), 2.0), valid=np.ones((1, 1), dtype=bool))


def test_point_cloud_defaults():
    cloud = PointCloud(positions=np.zeros((4, 3)))
    assert len(cloud) == 4
    assert cloud.normal_count == 0
    assert cloud.keyframe_ids.tolist() == [-1, -1, -1, -1]


def test_point_cloud_concatenate_keeps_attributes():
    a = PointCloud(
        positions=np.zeros((2, 3)), normals=[[0, 0, 1], [0, 0, 0]], keyframe_ids=0
    )
    b = PointCloud(positions=np.ones((1, 3)), keyframe_ids=1)
    merged = PointCloud.concatenate([a, PointCloud.empty(), b])
    assert len(merged) == 3
    assert merged.has_normal.tolist() == [True, False, False]
    assert merged.keyframe_ids.tolist() == [0, 0, 1]
