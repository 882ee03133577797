"""
Pose algebra. Poses are camera-to-world similarities; world-to-camera is
`pose_inverse(pose)`.
"""

import numpy as np

from msfusion.domains.geometry.quaternion import (
    normalize_quaternion,
    quat_conjugate,
    quat_multiply,
    quat_to_rotation,
)
from msfusion.domains.geometry.schemas import CameraPose

__all__ = [
    "quat_to_rotation",
    "pose_apply",
    "pose_compose",
    "pose_inverse",
    "rotate_vectors",
]


def pose_apply(pose: CameraPose, points: np.ndarray) -> np.ndarray:
    """
    s * R @ p + t for a single 3-vector or an (N, 3) array of points.
    """
    points = np.asarray(points, dtype=np.float64)
    single = points.ndim == 1
    flat = points.reshape(-1, 3)
    mapped = pose.scale * flat @ pose.rotation.T + pose.t
    return mapped[0] if single else mapped.reshape(points.shape)


def rotate_vectors(pose: CameraPose, vectors: np.ndarray) -> np.ndarray:
    """Rotate direction vectors (normals) by the pose's rotation only."""
    vectors = np.asarray(vectors, dtype=np.float64)
    return (vectors.reshape(-1, 3) @ pose.rotation.T).reshape(vectors.shape)


def pose_compose(a: CameraPose, b: CameraPose) -> CameraPose:
    """
    Pose equivalent to applying b first, then a:
    pose_apply(compose(a, b), p) == pose_apply(a, pose_apply(b, p)).
    """
    quaternion = normalize_quaternion(quat_multiply(a.quaternion, b.quaternion))
    translation = a.scale * (a.rotation @ b.t) + a.t
    return CameraPose(
        quaternion=quaternion,
        translation=translation,
        scale=a.scale * b.scale,
    )


def pose_inverse(a: CameraPose) -> CameraPose:
    """p = (1/s) R^T (y - t); compose(a, inverse(a)) is the identity."""
    inverse_scale = 1.0 / a.scale
    translation = -inverse_scale * (a.rotation.T @ a.t)
    return CameraPose(
        quaternion=quat_conjugate(a.quaternion),
        translation=translation,
        scale=inverse_scale,
    )
