from typing import Tuple

import numpy as np

from msfusion.core.constants import DEGENERATE_NORM


def readonly(values: np.ndarray, dtype=np.float64) -> np.ndarray:
    """
    Return a private, read-only copy of `values`.

    Domain types keep their arrays behind this so a container stays
    immutable after construction.
    """
    array = np.array(values, dtype=dtype, copy=True)
    array.flags.writeable = False
    return array


def normalize_vectors(
    vectors: np.ndarray, eps: float = DEGENERATE_NORM
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normalise vectors along the last axis.

    Returns:
        (unit vectors, ok mask). Entries with norm <= eps are zeroed and
        flagged False in the mask.
    """
    vectors = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(vectors, axis=-1)
    ok = norms > eps
    safe = np.where(ok, norms, 1.0)
    unit = vectors / safe[..., None]
    unit[~ok] = 0.0
    return unit, ok


def angle_between_deg(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """
    Angle in degrees between unit vectors along the last axis, via the
    arccos of the clamped dot product. Always within [0, 180].
    """
    dots = np.clip(np.sum(np.asarray(a) * np.asarray(b), axis=-1), -1.0, 1.0)
    return np.degrees(np.arccos(dots))


def rotate_towards(
    vectors: np.ndarray, source: np.ndarray, target: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Apply, per element, the minimal rotation taking unit `source` onto unit
    `target` to `vectors` (Rodrigues form with axis source x target).

    Returns:
        (rotated vectors, ok mask); antipodal source/target pairs have no
        unique minimal rotation and are flagged False.
    """
    axis = np.cross(source, target)
    cos = np.sum(source * target, axis=-1)
    ok = cos > -1.0 + 1e-9
    denom = np.where(ok, 1.0 + cos, 1.0)
    along = np.sum(axis * vectors, axis=-1)
    rotated = (
        vectors * cos[..., None]
        + np.cross(axis, vectors)
        + axis * (along / denom)[..., None]
    )
    rotated[~ok] = 0.0
    return rotated, ok
