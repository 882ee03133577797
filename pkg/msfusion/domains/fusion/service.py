from typing import Optional, Tuple

import numpy as np
from scipy import ndimage, sparse
from scipy.sparse.linalg import cg

from msfusion.core.logging_config import get_logger
from msfusion.core.utils import normalize_vectors, rotate_towards
from msfusion.domains.fusion.exceptions import EmptyInput, SolverDiverged
from msfusion.domains.fusion.schemas import FusedSurface, FusionConfig, JointSolution
from msfusion.domains.geometry.schemas import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    NormalMap,
    PointCloud,
)
from msfusion.domains.geometry.service import pose_apply, pose_inverse, rotate_vectors
from msfusion.domains.ingest.service import grid_normals

logger = get_logger(__name__)


# ============================================================================
# VIEW CONVERSION AND ASSOCIATION
# ============================================================================


def transform_cloud_to_keyframe(cloud: PointCloud, pose: CameraPose) -> PointCloud:
    """World -> keyframe camera frame: positions by pose^-1, normals by R^T."""
    inverse = pose_inverse(pose)
    return cloud.with_geometry(
        positions=pose_apply(inverse, cloud.positions),
        normals=rotate_vectors(inverse, cloud.normals),
    )


def _pixel_hits(
    cloud_cam: PointCloud, intr: CameraIntrinsics
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Nearest pixel of every point.

    Returns:
        (row, col, inside mask, reprojection residual in pixels)
    """
    u, v, z = intr.project(cloud_cam.positions)
    in_front = z > 0
    col = np.floor(np.where(in_front, u, -1.0) + 0.5).astype(np.int64)
    row = np.floor(np.where(in_front, v, -1.0) + 0.5).astype(np.int64)
    inside = (
        in_front & (col >= 0) & (col < intr.width) & (row >= 0) & (row < intr.height)
    )
    residual = np.where(inside, np.hypot(u - col, v - row), np.inf)
    return row, col, inside, residual


def associate_normals(
    cloud_cam: PointCloud, normals: NormalMap, intr: CameraIntrinsics
) -> PointCloud:
    """
    Attach to each point the normal of the pixel it projects to (nearest
    pixel). Points behind the camera, outside the image or on invalid
    pixels carry no normal.
    """
    row, col, inside, _ = _pixel_hits(cloud_cam, intr)
    attached = np.zeros(len(cloud_cam), dtype=bool)
    values = np.zeros((len(cloud_cam), 3))
    attached[inside] = normals.valid[row[inside], col[inside]]
    values[attached] = normals.normals[row[attached], col[attached]]
    return PointCloud(
        positions=cloud_cam.positions,
        normals=values,
        has_normal=attached,
        colors=cloud_cam.colors,
        keyframe_ids=cloud_cam.keyframe_ids,
    )


# ============================================================================
# DENSIFICATION
# ============================================================================


def densify(
    cloud_cam: PointCloud,
    dense_depth: DepthMap,
    normals: NormalMap,
    intr: CameraIntrinsics,
    colors: Optional[np.ndarray] = None,
    keyframe_id: int = -1,
) -> FusedSurface:
    """
    Build the keyframe's fusion grid.

    A pixel hit by cloud points takes the position of the hit with the
    smallest reprojection residual (ties: lowest point index) and is
    `sampled`; other pixels take the backprojected hole-filled depth. A
    pixel is valid when it has a valid normal and a position.

    Raises:
        EmptyInput: the cloud is empty and no depth is valid
    """
    if len(cloud_cam) == 0 and dense_depth.valid_count == 0:
        raise EmptyInput()

    shape = intr.shape
    row, col, inside, residual = _pixel_hits(cloud_cam, intr)
    hit = np.flatnonzero(inside)
    pixel = row[hit] * intr.width + col[hit]
    order = np.lexsort((hit, residual[hit], pixel))
    winners_pixel, first = np.unique(pixel[order], return_index=True)
    winners = hit[order[first]]

    sampled = np.zeros(shape, dtype=bool)
    sampled.flat[winners_pixel] = True
    positions = intr.ray_directions() * dense_depth.depth[..., None]
    positions.reshape(-1, 3)[winners_pixel] = cloud_cam.positions[winners]

    valid = normals.valid & (sampled | dense_depth.valid)
    positions[~valid] = 0.0

    # winning points whose pixel has no valid normal, plus points outside the image
    winner_valid = valid.flat[winners_pixel]
    leftover = np.concatenate([winners[~winner_valid], np.flatnonzero(~inside)])
    unassociated = cloud_cam.subset(np.sort(leftover))
    unassociated = PointCloud(
        positions=unassociated.positions,
        colors=unassociated.colors,
        keyframe_ids=unassociated.keyframe_ids,
    )

    measured = np.where(valid[..., None], normals.normals, 0.0)
    surface = FusedSurface(
        positions=positions,
        measured_normals=measured,
        corrected_normals=measured,
        valid=valid,
        sampled=sampled & valid,
        colors=colors,
        keyframe_id=keyframe_id,
        unassociated=unassociated,
    )
    logger.debug(
        "Surface densified",
        sampled=surface.sampled_count,
        densified=surface.densified_count,
        unassociated=len(unassociated),
    )
    return surface


# ============================================================================
# LOW-FREQUENCY NORMAL CORRECTION
# ============================================================================


def _boxcar(
    values: np.ndarray, weights: np.ndarray, radius: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Normalised boxcar average of an (H, W, C) field over pixels with
    `weights`; returns (average, support mask).
    """
    size = 2 * radius + 1
    w = weights.astype(np.float64)
    total = ndimage.uniform_filter(w, size=size, mode="constant")
    support = total > 1e-12
    averaged = np.zeros_like(values)
    for c in range(values.shape[-1]):
        smoothed = ndimage.uniform_filter(
            values[..., c] * w, size=size, mode="constant"
        )
        averaged[..., c] = np.where(
            support, smoothed / np.where(support, total, 1.0), 0.0
        )
    return averaged, support


def correct_normal_bias(
    surface: FusedSurface, cfg: Optional[FusionConfig] = None
) -> FusedSurface:
    """
    Remove the low-frequency disagreement between the measured normals and
    the surface positions.

    Positions are boxcar-smoothed and differentiated into position normals;
    both normal fields are smoothed with the same boxcar, and each measured
    normal is rotated by the minimal rotation taking its smoothed measured
    normal onto its smoothed position normal. Pixels where either field is
    undefined keep their measured normal.
    """
    cfg = cfg or FusionConfig()
    valid = surface.valid
    if not np.any(valid):
        return surface

    radius = cfg.smoothing_radius
    smoothed_positions, _ = _boxcar(surface.positions, valid, radius)
    position_normals, ok, degenerate = grid_normals(smoothed_positions, valid)

    target, target_support = _boxcar(position_normals, ok, radius)
    source, source_support = _boxcar(surface.measured_normals, valid, radius)
    target, target_ok = normalize_vectors(target)
    source, source_ok = normalize_vectors(source)

    rotated, rotation_ok = rotate_towards(surface.measured_normals, source, target)
    apply = (
        valid & target_support & source_support & target_ok & source_ok & rotation_ok
    )
    rotated, unit_ok = normalize_vectors(rotated)
    apply &= unit_ok

    corrected = np.where(apply[..., None], rotated, surface.measured_normals)
    logger.debug(
        "Normal bias corrected",
        corrected=int(np.count_nonzero(apply)),
        uncorrected=int(np.count_nonzero(valid & ~apply)),
        degenerate=degenerate,
    )
    return surface.model_copy(update={"corrected_normals": _frozen(corrected)})


def _frozen(values: np.ndarray) -> np.ndarray:
    values = np.ascontiguousarray(values, dtype=np.float64)
    values.flags.writeable = False
    return values


# ============================================================================
# JOINT OPTIMISATION
# ============================================================================


def _tangent_edges(valid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    (i, j) pairs of valid-pixel indices (row-major among valid pixels) for
    every right and down neighbour that is also valid.
    """
    index = np.full(valid.shape, -1, dtype=np.int64)
    index[valid] = np.arange(int(np.count_nonzero(valid)))
    right = valid[:, :-1] & valid[:, 1:]
    down = valid[:-1, :] & valid[1:, :]
    i = np.concatenate([index[:, :-1][right], index[:-1, :][down]])
    j = np.concatenate([index[:, 1:][right], index[1:, :][down]])
    return i, j


def _system(
    surface: FusedSurface, cfg: FusionConfig
) -> Tuple[sparse.csr_matrix, np.ndarray]:
    """
    Stacked least-squares system A x = b over the 3N unknown coordinates:
    sqrt(w_p) (x_i - m_i) rows and sqrt(w_n) n_i . (x_j - x_i) rows.
    """
    valid = surface.valid
    measured = surface.positions[valid]
    normals = surface.corrected_normals[valid]
    n = measured.shape[0]
    i, j = _tangent_edges(valid)
    e = i.shape[0]

    sp = np.sqrt(cfg.weight_position)
    sn = np.sqrt(cfg.weight_normal)

    rows = [np.arange(3 * n)]
    cols = [np.arange(3 * n)]
    data = [np.full(3 * n, sp)]

    edge_rows = 3 * n + np.arange(e)
    for c in range(3):
        weight = sn * normals[i, c]
        rows += [edge_rows, edge_rows]
        cols += [3 * j + c, 3 * i + c]
        data += [weight, -weight]

    a = sparse.coo_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(3 * n + e, 3 * n),
    ).tocsr()
    b = np.concatenate([sp * measured.reshape(-1), np.zeros(e)])
    return a, b


def fusion_objective(
    positions: np.ndarray, surface: FusedSurface, cfg: FusionConfig
) -> float:
    """
    w_p * sum |p_i - m_i|^2 + w_n * sum over right/down neighbours of
    (n_i . (p_j - p_i))^2, for positions of the valid pixels in row-major order.
    """
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    measured = surface.positions[surface.valid]
    normals = surface.corrected_normals[surface.valid]
    i, j = _tangent_edges(surface.valid)
    position_term = np.sum((positions - measured) ** 2)
    normal_term = np.sum(
        np.sum(normals[i] * (positions[j] - positions[i]), axis=-1) ** 2
    )
    return float(cfg.weight_position * position_term + cfg.weight_normal * normal_term)


def optimize_positions(
    surface: FusedSurface, cfg: Optional[FusionConfig] = None
) -> JointSolution:
    """
    Solve the normal equations A^T A x = A^T b with Jacobi-preconditioned
    conjugate gradients, starting from the measured positions.

    Raises:
        EmptyInput: the surface has no valid pixel
        SolverDiverged: the relative residual did not reach the tolerance
    """
    cfg = cfg or FusionConfig()
    if surface.valid_count == 0:
        raise EmptyInput()

    a, b = _system(surface, cfg)
    normal_matrix = (a.T @ a).tocsr()
    rhs = a.T @ b
    preconditioner = sparse.diags(1.0 / normal_matrix.diagonal())
    start = surface.positions[surface.valid].reshape(-1)

    iterations = 0

    def count(_):
        nonlocal iterations
        iterations += 1

    solution, info = cg(
        normal_matrix,
        rhs,
        x0=start,
        rtol=cfg.tolerance,
        atol=0.0,
        maxiter=cfg.max_iterations,
        M=preconditioner,
        callback=count,
    )
    norm_rhs = float(np.linalg.norm(rhs))
    residual = float(np.linalg.norm(rhs - normal_matrix @ solution))
    relative = residual / norm_rhs if norm_rhs > 0 else residual
    if info != 0:
        raise SolverDiverged(iterations, relative, cfg.tolerance)

    positions = solution.reshape(-1, 3)
    before = fusion_objective(start, surface, cfg)
    after = fusion_objective(positions, surface, cfg)
    logger.debug(
        "Positions optimised",
        unknowns=int(start.shape[0]),
        iterations=iterations,
        relative_residual=relative,
        objective_before=before,
        objective_after=after,
    )
    return JointSolution(
        positions=positions,
        iterations=iterations,
        relative_residual=relative,
        objective_before=before,
        objective_after=after,
    )


def fused_cloud(
    surface: FusedSurface,
    positions: Optional[np.ndarray] = None,
    pose: Optional[CameraPose] = None,
    include_unassociated: bool = True,
) -> PointCloud:
    """
    One point per valid pixel (row-major) with its corrected normal, followed
    by the unassociated SLAM points as normal-less points. Positions default
    to the measured ones; with `pose` the cloud is mapped to the world frame.
    """
    valid = surface.valid
    if positions is None:
        positions = surface.positions[valid]
    cloud = PointCloud(
        positions=positions,
        normals=surface.corrected_normals[valid],
        has_normal=np.ones(surface.valid_count, dtype=bool),
        colors=None if surface.colors is None else surface.colors[valid],
        keyframe_ids=surface.keyframe_id,
    )
    if include_unassociated and len(surface.unassociated):
        extra = surface.unassociated
        if cloud.colors is not None and extra.colors is None:
            extra = PointCloud(
                positions=extra.positions,
                colors=np.zeros((len(extra), 3)),
                keyframe_ids=extra.keyframe_ids,
            )
        cloud = PointCloud.concatenate([cloud, extra])
    if pose is not None:
        cloud = cloud.with_geometry(
            positions=pose_apply(pose, cloud.positions),
            normals=rotate_vectors(pose, cloud.normals),
        )
    return cloud


def joint_optimize(
    surface: FusedSurface, cfg: Optional[FusionConfig] = None
) -> PointCloud:
    """Optimised positions with corrected normals, one point per valid pixel."""
    solution = optimize_positions(surface, cfg)
    return fused_cloud(surface, solution.positions, include_unassociated=False)
