import numpy as np
import pytest

from msfusion.core.error_handlers import InputValidationError
from msfusion.domains.geometry.quaternion import quat_to_rotation
from msfusion.domains.geometry.schemas import PointCloud
from msfusion.domains.icp.exceptions import (
    DegenerateCorrespondences,
    InsufficientOverlap,
)
from msfusion.domains.icp.schemas import IcpConfig, Registration, RigidTransform
from msfusion.domains.icp.service import (
    apply_registration,
    estimate_rigid_transform,
    icp_register,
    merge_clouds,
)


def axis_angle(axis, degrees):
    axis = np.asarray(axis, dtype=np.float64)
    axis /= np.linalg.norm(axis)
    half = np.radians(degrees) / 2.0
    return quat_to_rotation(np.concatenate([[np.cos(half)], np.sin(half) * axis]))


def wavy_surface(n=50, amplitude=0.3, frequency=3.0):
    """Heightfield z = a sin(fx) sin(fy) sampled on an n x n grid over [-1, 1]^2."""
    x, y = np.meshgrid(np.linspace(-1, 1, n), np.linspace(-1, 1, n))
    z = amplitude * np.sin(frequency * x) * np.sin(frequency * (y + 0.3))
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=-1)


def identity_registration():
    return Registration(
        transform=RigidTransform.identity(), fitness=1.0, rms=0.0, iterations=0
    )


# ==================== CLOSED-FORM ALIGNMENT ====================


def test_identical_points_give_identity(rng):
    points = rng.normal(size=(20, 3))
    transform = estimate_rigid_transform(points, points)
    np.testing.assert_allclose(transform.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(transform.translation, 0.0, atol=1e-12)


def test_pure_translation(rng):
    points = rng.normal(size=(10, 3))
    transform = estimate_rigid_transform(points, points + [1.0, -2.0, 0.5])
    np.testing.assert_allclose(transform.rotation, np.eye(3), atol=1e-12)
    np.testing.assert_allclose(transform.translation, [1.0, -2.0, 0.5], atol=1e-12)


def test_random_rigid_motion_is_recovered(rng):
    points = rng.normal(size=(30, 3))
    rotation = axis_angle(rng.normal(size=3), 70.0)
    shift = rng.normal(size=3)
    transform = estimate_rigid_transform(points, points @ rotation.T + shift)
    np.testing.assert_allclose(transform.rotation, rotation, atol=1e-9)
    np.testing.assert_allclose(transform.translation, shift, atol=1e-9)


def test_planar_points_give_a_proper_rotation(rng):
    points = np.column_stack([rng.normal(size=(15, 2)), np.zeros(15)])
    rotation = axis_angle([1.0, 1.0, 0.0], 40.0)
    transform = estimate_rigid_transform(points, points @ rotation.T)
    assert np.linalg.det(transform.rotation) == pytest.approx(1.0)
    np.testing.assert_allclose(transform.rotation, rotation, atol=1e-9)


def test_noisy_alignment_is_a_minimiser(rng):
    points = rng.normal(size=(40, 3))
    rotation = axis_angle([0.2, -1.0, 0.4], 25.0)
    noise = rng.normal(scale=0.05, size=(40, 3))
    target = points @ rotation.T + [0.3, 0.1, -0.7] + noise
    best = estimate_rigid_transform(points, target)

    def error(transform):
        return float(np.sum((transform.apply_points(points) - target) ** 2))

    optimum = error(best)
    for axis in np.vstack([np.eye(3), -np.eye(3)]):
        turned = RigidTransform(
            rotation=axis_angle(axis, 0.1) @ best.rotation,
            translation=best.translation,
        )
        shifted = RigidTransform(
            rotation=best.rotation, translation=best.translation + 1e-3 * axis
        )
        assert error(turned) > optimum
        assert error(shifted) > optimum


def test_too_few_pairs():
    with pytest.raises(DegenerateCorrespondences):
        estimate_rigid_transform(np.eye(3)[:2], np.eye(3)[:2])


def test_collinear_sources():
    line = np.outer(np.arange(5.0), [1.0, 2.0, 3.0])
    with pytest.raises(DegenerateCorrespondences):
        estimate_rigid_transform(line, line)


def test_mismatched_lengths():
    with pytest.raises(InputValidationError) as info:
        estimate_rigid_transform(np.zeros((4, 3)), np.zeros((5, 3)))
    assert info.value.error_code == "DIMENSION_MISMATCH"


def test_transform_helpers_round_trip():
    transform = RigidTransform(
        rotation=axis_angle([0, 0, 1], 90.0), translation=[1.0, 0.0, 0.0]
    )
    assert transform.rotation_angle_deg() == pytest.approx(90.0)
    identity = transform.compose(transform.inverse())
    np.testing.assert_allclose(identity.matrix(), np.eye(4), atol=1e-12)
    moved = transform.apply_points([1.0, 0.0, 0.0])
    np.testing.assert_allclose(moved, [[1.0, 1.0, 0.0]], atol=1e-12)


def test_reflection_is_not_a_rigid_transform():
    with pytest.raises(ValueError):
        RigidTransform(rotation=np.diag([1.0, 1.0, -1.0]))


# ==================== ICP ====================


def test_cloud_registers_onto_itself():
    cloud = PointCloud(positions=wavy_surface(20))
    registration = icp_register(cloud, cloud)
    np.testing.assert_allclose(registration.transform.rotation, np.eye(3), atol=1e-9)
    np.testing.assert_allclose(registration.transform.translation, 0.0, atol=1e-9)
    assert registration.fitness == 1.0
    assert registration.rms == pytest.approx(0.0, abs=1e-12)


def test_known_motion_is_recovered():
    target = wavy_surface()
    motion = RigidTransform(
        rotation=axis_angle([1, 2, 3], 3.0), translation=[0.04, -0.03, 0.02]
    )
    source = PointCloud(positions=motion.apply_points(target))
    cfg = IcpConfig(
        max_iterations=300,
        convergence_threshold=1e-12,
        max_correspondence_distance=0.5,
        trim_fraction=0.0,
    )

    registration = icp_register(source, PointCloud(positions=target), cfg)
    residual = registration.transform.compose(motion)
    assert residual.rotation_angle_deg() < 0.1
    # extent of the surface is 2
    assert np.linalg.norm(residual.translation) < 0.02
    assert registration.fitness == 1.0
    trace = np.array(registration.rms_trace)
    assert np.all(np.diff(trace) <= 0)


def test_initial_guess_is_used():
    target = wavy_surface(30)
    motion = RigidTransform(
        rotation=axis_angle([0, 0, 1], 2.0), translation=[0.5, 0.0, 0.0]
    )
    source = PointCloud(positions=motion.apply_points(target))
    cfg = IcpConfig(max_correspondence_distance=0.2, trim_fraction=0.0)
    registration = icp_register(
        source, PointCloud(positions=target), cfg, initial=motion.inverse()
    )
    assert registration.transform.compose(motion).rotation_angle_deg() < 0.1


def test_disjoint_clouds_do_not_overlap():
    target = PointCloud(positions=wavy_surface(10))
    source = PointCloud(positions=wavy_surface(10) + [10.0, 0.0, 0.0])
    with pytest.raises(InsufficientOverlap) as info:
        icp_register(source, target)
    assert info.value.details["fitness"] == 0.0


def test_no_correspondences_fail_even_without_a_fitness_bar():
    target = PointCloud(positions=wavy_surface(10))
    source = PointCloud(positions=wavy_surface(10) + [10.0, 0.0, 0.0])
    with pytest.raises(InsufficientOverlap):
        icp_register(source, target, IcpConfig(min_fitness=0.0))


def test_empty_cloud_is_rejected():
    with pytest.raises(InputValidationError) as info:
        icp_register(PointCloud.empty(), PointCloud(positions=wavy_surface(5)))
    assert info.value.error_code == "EMPTY_CLOUD"


def test_apply_registration_moves_normals():
    cloud = PointCloud(positions=[[1.0, 0.0, 0.0]], normals=[[1.0, 0.0, 0.0]])
    transform = RigidTransform(
        rotation=axis_angle([0, 0, 1], 90.0), translation=[0, 0, 1]
    )
    moved = apply_registration(cloud, transform)
    np.testing.assert_allclose(moved.positions, [[0.0, 1.0, 1.0]], atol=1e-12)
    np.testing.assert_allclose(moved.normals, [[0.0, 1.0, 0.0]], atol=1e-12)


# ==================== MERGING ====================


def test_merge_prefers_points_with_normals():
    base = PointCloud(positions=[[0.0, 0.0, 0.0]], keyframe_ids=1)
    incoming = PointCloud(
        positions=[[0.01, 0.0, 0.0], [1.0, 1.0, 1.0]],
        normals=[[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]],
        keyframe_ids=2,
    )
    merged = merge_clouds(base, incoming, identity_registration(), voxel=0.1)
    assert len(merged) == 2
    np.testing.assert_array_equal(merged.positions, [[0.01, 0.0, 0.0], [1.0, 1.0, 1.0]])
    assert merged.has_normal.all()


def test_merge_prefers_lower_keyframe_then_earlier_point():
    base = PointCloud(positions=[[0.0, 0.0, 0.0], [0.02, 0.0, 0.0]], keyframe_ids=3)
    incoming = PointCloud(positions=[[0.01, 0.0, 0.0]], keyframe_ids=1)
    merged = merge_clouds(base, incoming, identity_registration(), voxel=0.1)
    assert merged.keyframe_ids.tolist() == [1]

    same = merge_clouds(base, PointCloud.empty(), identity_registration(), voxel=0.1)
    assert same is base
    deduplicated = merge_clouds(
        PointCloud.empty(), base, identity_registration(), voxel=0.1
    )
    np.testing.assert_array_equal(deduplicated.positions, [[0.0, 0.0, 0.0]])


def test_merge_applies_registration():
    base = PointCloud(positions=[[0.0, 0.0, 0.0]], keyframe_ids=0)
    incoming = PointCloud(positions=[[0.0, 0.0, 0.0]], keyframe_ids=1)
    shift = Registration(
        transform=RigidTransform(translation=[5.0, 0.0, 0.0]),
        fitness=1.0,
        rms=0.0,
        iterations=1,
    )
    merged = merge_clouds(base, incoming, shift, voxel=0.1)
    np.testing.assert_array_equal(merged.positions, [[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]])


@pytest.mark.parametrize("voxel", [0.0, -0.5])
def test_merge_rejects_bad_voxel(voxel):
    cloud = PointCloud(positions=[[0.0, 0.0, 0.0]])
    with pytest.raises(InputValidationError):
        merge_clouds(cloud, cloud, identity_registration(), voxel=voxel)
