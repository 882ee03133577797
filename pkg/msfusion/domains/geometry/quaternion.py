"""
Quaternion helpers. Component order is (w, x, y, z) everywhere inside the
package; files use the (x, y, z, w) trailer order and convert at the edge.
"""

from typing import Sequence

import numpy as np
from scipy.spatial.transform import Rotation

from msfusion.core.constants import QUATERNION_RENORMALIZE_LIMIT
from msfusion.domains.geometry.exceptions import NonUnitQuaternion


def normalize_quaternion(q: Sequence[float]) -> np.ndarray:
    """
    Return q scaled to unit norm.

    Raises:
        NonUnitQuaternion: if |q| deviates from 1 by more than 1e-2
    """
    q = np.asarray(q, dtype=np.float64).reshape(4)
    norm = float(np.linalg.norm(q))
    if not np.isfinite(norm) or abs(norm - 1.0) > QUATERNION_RENORMALIZE_LIMIT:
        raise NonUnitQuaternion(norm)
    return q / norm


def quat_to_rotation(q: Sequence[float]) -> np.ndarray:
    """
    3x3 rotation matrix of a unit quaternion (w, x, y, z).

    The matrix is evaluated term by term from the quaternion products, so
    q and -q give bit-identical results.
    """
    w, x, y, z = normalize_quaternion(q)
    return np.array(
        [
            [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
        ]
    )


def rotation_to_quat(rotation: np.ndarray) -> np.ndarray:
    """Unit quaternion (w, x, y, z) with w >= 0 for a rotation matrix."""
    x, y, z, w = Rotation.from_matrix(np.asarray(rotation, dtype=np.float64)).as_quat()
    q = np.array([w, x, y, z])
    if q[0] < 0:
        q = -q
    return q / np.linalg.norm(q)


def quat_multiply(a: Sequence[float], b: Sequence[float]) -> np.ndarray:
    """Hamilton product a * b; rotation of the product is R(a) @ R(b)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: Sequence[float]) -> np.ndarray:
    w, x, y, z = q
    return np.array([w, -x, -y, -z])
