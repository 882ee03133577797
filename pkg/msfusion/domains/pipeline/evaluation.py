"""
Accuracy metrics against ground truth.
"""

from typing import Optional, Tuple, Union

import numpy as np
from scipy.spatial import cKDTree

from msfusion.core.utils import angle_between_deg
from msfusion.domains.bundle_io.schemas import GroundTruthFrame
from msfusion.domains.geometry.schemas import (
    CameraIntrinsics,
    CameraPose,
    NormalMap,
    PointCloud,
)
from msfusion.domains.geometry.service import pose_apply, rotate_vectors
from msfusion.domains.pipeline.exceptions import DimensionMismatch
from msfusion.domains.pipeline.schemas import AccuracyMetrics


def angular_errors(estimated: np.ndarray, truth: np.ndarray) -> np.ndarray:
    """Per-vector angle in degrees between two (N, 3) arrays of unit vectors."""
    estimated = np.asarray(estimated, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimated.shape != truth.shape:
        raise DimensionMismatch("normals", estimated.shape, truth.shape)
    return angle_between_deg(estimated, truth)


def summarize_angles(
    errors: np.ndarray, metrics: Optional[AccuracyMetrics] = None
) -> AccuracyMetrics:
    metrics = metrics or AccuracyMetrics()
    errors = np.asarray(errors, dtype=np.float64).reshape(-1)
    if errors.size == 0:
        return metrics
    return metrics.model_copy(
        update={
            "normal_count": int(errors.size),
            "normal_error_mean_deg": float(np.mean(errors)),
            "normal_error_median_deg": float(np.median(errors)),
            "normal_error_p95_deg": float(np.percentile(errors, 95)),
        }
    )


def normal_map_errors(
    estimated: NormalMap, truth: NormalMap, exclude: Optional[np.ndarray] = None
) -> np.ndarray:
    """Angular errors over pixels valid in both maps and not in `exclude`."""
    if estimated.shape != truth.shape:
        raise DimensionMismatch("normal maps", estimated.shape, truth.shape)
    both = estimated.valid & truth.valid
    if exclude is not None:
        if exclude.shape != truth.shape:
            raise DimensionMismatch("exclusion mask", exclude.shape, truth.shape)
        both &= ~exclude
    return angular_errors(estimated.normals[both], truth.normals[both])


def evaluate_normal_map(
    estimated: NormalMap, truth: NormalMap, exclude: Optional[np.ndarray] = None
) -> AccuracyMetrics:
    return summarize_angles(normal_map_errors(estimated, truth, exclude))


def cloud_errors(
    cloud: PointCloud, reference: PointCloud
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Distance from each point to its nearest reference point, and the normal
    error of each point with a normal against that reference point's normal.
    """
    if len(cloud) == 0 or len(reference) == 0:
        return np.zeros(0), np.zeros(0)
    distance, index = cKDTree(reference.positions).query(cloud.positions, k=1)
    paired = cloud.has_normal & reference.has_normal[index]
    return (
        distance,
        angular_errors(cloud.normals[paired], reference.normals[index[paired]]),
    )


def summarize_cloud(distances: np.ndarray, angles: np.ndarray) -> AccuracyMetrics:
    metrics = AccuracyMetrics()
    if distances.size:
        metrics = AccuracyMetrics(
            point_count=int(distances.size),
            position_rmse=float(np.sqrt(np.mean(distances**2))),
        )
    return summarize_angles(angles, metrics)


def evaluate_cloud(cloud: PointCloud, reference: PointCloud) -> AccuracyMetrics:
    """Position RMSE against the nearest reference points, plus normal errors."""
    return summarize_cloud(*cloud_errors(cloud, reference))


def evaluate(
    result: Union[PointCloud, NormalMap],
    truth: Union[PointCloud, NormalMap],
    exclude: Optional[np.ndarray] = None,
) -> AccuracyMetrics:
    """Compare a recovered normal map or cloud with its ground truth counterpart."""
    if isinstance(result, NormalMap) and isinstance(truth, NormalMap):
        return evaluate_normal_map(result, truth, exclude)
    if isinstance(result, PointCloud) and isinstance(truth, PointCloud):
        return evaluate_cloud(result, truth)
    raise DimensionMismatch(
        f"{type(result).__name__} with {type(truth).__name__}", (), ()
    )


def reference_cloud(
    gt: GroundTruthFrame, intr: CameraIntrinsics, pose: CameraPose
) -> PointCloud:
    """World-frame ground-truth surface points with normals.

    The pose's scale is ignored.
    """
    if gt.depth.shape != intr.shape:
        raise DimensionMismatch("ground truth depth", gt.depth.shape, intr.shape)
    rigid = pose.rigid()
    valid = gt.depth.valid & gt.normals.valid
    points = intr.ray_directions()[valid] * gt.depth.depth[valid][:, None]
    return PointCloud(
        positions=pose_apply(rigid, points),
        normals=rotate_vectors(rigid, gt.normals.normals[valid]),
        has_normal=np.ones(points.shape[0], dtype=bool),
        keyframe_ids=gt.keyframe_id,
    )
