from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from msfusion.core.error_handlers import InputValidationError
from msfusion.core.logging_config import get_logger
from msfusion.domains.geometry.schemas import PointCloud
from msfusion.domains.icp.exceptions import (
    DegenerateCorrespondences,
    InsufficientOverlap,
)
from msfusion.domains.icp.schemas import IcpConfig, Registration, RigidTransform

logger = get_logger(__name__)

# Centred sources whose second singular value is below this fraction of the
# first are collinear
COLLINEAR_RATIO = 1e-10


def estimate_rigid_transform(source: np.ndarray, target: np.ndarray) -> RigidTransform:
    """
    Closed-form R, t minimising sum |R s_i + t - t_i|^2 from the SVD of the
    cross-covariance, with the reflection case corrected.

    Raises:
        DegenerateCorrespondences: fewer than 3 pairs or collinear sources
    """
    source = np.asarray(source, dtype=np.float64).reshape(-1, 3)
    target = np.asarray(target, dtype=np.float64).reshape(-1, 3)
    count = source.shape[0]
    if count != target.shape[0]:
        raise InputValidationError(
            "Correspondence arrays differ in length",
            error_code="DIMENSION_MISMATCH",
            details={"source": count, "target": int(target.shape[0])},
        )
    if count < 3:
        raise DegenerateCorrespondences(count, "at least 3 pairs are required")

    mu_s = source.mean(axis=0)
    mu_t = target.mean(axis=0)
    centred_s = source - mu_s
    spread = np.linalg.svd(centred_s, compute_uv=False)
    if spread[0] == 0 or spread[1] <= COLLINEAR_RATIO * spread[0]:
        raise DegenerateCorrespondences(count, "source points are collinear")

    cov = (target - mu_t).T @ centred_s / count
    u, _, vh = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vh) < 0:
        s[-1, -1] = -1
    rotation = u @ s @ vh
    return RigidTransform(rotation=rotation, translation=mu_t - rotation @ mu_s)


class _Matches(NamedTuple):
    kept: np.ndarray
    target_index: np.ndarray
    found: int
    rms: float


def _match(
    tree: cKDTree, source: np.ndarray, transform: RigidTransform, cfg: IcpConfig
) -> _Matches:
    """Nearest target per moved source point, keeping the best (1 - trim) share."""
    distance, index = tree.query(
        transform.apply_points(source),
        k=1,
        distance_upper_bound=cfg.max_correspondence_distance,
    )
    found = np.flatnonzero(np.isfinite(distance))
    keep = int(np.ceil((1.0 - cfg.trim_fraction) * found.shape[0]))
    keep = min(found.shape[0], max(keep, 3))
    order = np.argsort(distance[found], kind="stable")[:keep]
    kept = found[order]
    rms = float(np.sqrt(np.mean(distance[kept] ** 2))) if kept.size else float("inf")
    return _Matches(
        kept=kept, target_index=index[kept], found=int(found.shape[0]), rms=rms
    )


def icp_register(
    source: PointCloud,
    target: PointCloud,
    cfg: Optional[IcpConfig] = None,
    initial: Optional[RigidTransform] = None,
) -> Registration:
    """
    Trimmed point-to-point ICP of `source` onto `target`.

    Each step re-estimates the transform from the original source positions
    and the current trimmed correspondences. A step that would raise the RMS
    is rejected and ends the iteration, so the recorded RMS trace never
    increases.

    Raises:
        InsufficientOverlap: no correspondence in range, or final fitness
            below cfg.min_fitness
    """
    cfg = cfg or IcpConfig()
    if len(source) == 0 or len(target) == 0:
        raise InputValidationError(
            "Registration needs two non-empty clouds",
            error_code="EMPTY_CLOUD",
            details={"source": len(source), "target": len(target)},
        )

    tree = cKDTree(target.positions)
    points = source.positions
    transform = initial or RigidTransform.identity()
    matches = _match(tree, points, transform, cfg)
    trace = []
    iterations = 0

    if matches.kept.size >= 3:
        trace.append(matches.rms)
        for _ in range(cfg.max_iterations):
            try:
                candidate = estimate_rigid_transform(
                    points[matches.kept], target.positions[matches.target_index]
                )
            except DegenerateCorrespondences:
                break
            candidate_matches = _match(tree, points, candidate, cfg)
            if candidate_matches.kept.size < 3 or candidate_matches.rms > matches.rms:
                break
            improvement = matches.rms - candidate_matches.rms
            transform, matches = candidate, candidate_matches
            trace.append(matches.rms)
            iterations += 1
            if improvement < cfg.convergence_threshold:
                break

    fitness = matches.found / len(source)
    logger.debug(
        "Registration finished",
        iterations=iterations,
        fitness=round(fitness, 6),
        rms=matches.rms,
    )
    # Without a pair in range there is no RMS, whatever the fitness bar
    if matches.found == 0 or fitness < cfg.min_fitness:
        raise InsufficientOverlap(fitness, cfg.min_fitness)
    return Registration(
        transform=transform,
        fitness=fitness,
        rms=matches.rms,
        iterations=iterations,
        rms_trace=tuple(trace),
    )


def apply_registration(cloud: PointCloud, transform: RigidTransform) -> PointCloud:
    return cloud.with_geometry(
        positions=transform.apply_points(cloud.positions),
        normals=transform.apply_normals(cloud.normals),
    )


def merge_clouds(
    base: PointCloud, incoming: PointCloud, reg: Registration, voxel: float
) -> PointCloud:
    """
    Bring `incoming` into the base frame and keep one point per voxel:
    points with normals beat points without, then the lower keyframe id,
    then the earlier point. Survivors keep their input order (base first).
    """
    if voxel <= 0:
        raise InputValidationError(
            f"Voxel size must be positive, got {voxel}",
            error_code="INVALID_VOXEL_SIZE",
            details={"voxel": voxel},
        )
    if len(incoming) == 0:
        return base

    merged = PointCloud.concatenate([base, apply_registration(incoming, reg.transform)])
    positions = merged.positions
    keys = np.floor((positions - positions.min(axis=0)) / voxel).astype(np.int64)
    _, voxel_id = np.unique(keys, axis=0, return_inverse=True)
    voxel_id = voxel_id.reshape(-1)

    index = np.arange(len(merged))
    order = np.lexsort((index, merged.keyframe_ids, ~merged.has_normal, voxel_id))
    _, first = np.unique(voxel_id[order], return_index=True)
    survivors = np.sort(order[first])

    logger.debug(
        "Clouds merged",
        base=len(base),
        incoming=len(incoming),
        merged=int(survivors.shape[0]),
    )
    return merged.subset(survivors)
