from typing import Optional, Tuple

import numpy as np
from scipy import ndimage

from msfusion.core.constants import DEGENERATE_NORM, INVERSE_DEPTH_EPSILON
from msfusion.core.logging_config import get_logger
from msfusion.core.utils import normalize_vectors
from msfusion.domains.geometry.schemas import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    InverseDepthMap,
    MultispectralImage,
    NormalMap,
    PointCloud,
)
from msfusion.domains.geometry.service import pose_apply
from msfusion.domains.ingest.exceptions import AllInvalid, NonPositiveScale
from msfusion.domains.ingest.schemas import KeyframeBundle, PreparedKeyframe

logger = get_logger(__name__)

# 4-neighbourhood used to invalidate the neighbours of invalid depths
_CROSS = ndimage.generate_binary_structure(2, 1)


def invdepth_to_depth(idmap: InverseDepthMap) -> DepthMap:
    """
    Depth is the reciprocal of inverse depth. Missing, infinite, negative,
    zero and near-zero (<= 1e-9) inverse depths give depth 0 and an invalid
    flag.
    """
    values = idmap.values
    finite = np.isfinite(values)
    valid = finite & (np.where(finite, values, 0.0) > INVERSE_DEPTH_EPSILON)
    depth = np.zeros_like(values)
    np.divide(1.0, values, out=depth, where=valid)
    return DepthMap(depth=depth, valid=valid)


def rescale_depth(depth: DepthMap, scale: float) -> DepthMap:
    """Multiply every valid depth by `scale`; validity is unchanged."""
    if not (np.isfinite(scale) and scale > 0):
        raise NonPositiveScale(float(scale))
    return DepthMap(
        depth=depth.depth * scale,
        valid=depth.valid,
        interpolated=depth.interpolated,
    )


def _nearest_valid_along_axis(
    valid: np.ndarray, axis: int
) -> Tuple[np.ndarray, np.ndarray]:
    """
    For every pixel, the index of the nearest valid pixel before it and
    after it along `axis` (-1 / size when there is none).
    """
    size = valid.shape[axis]
    shape = [1, 1]
    shape[axis] = size
    index = np.arange(size).reshape(shape)
    index = np.broadcast_to(index, valid.shape)

    before = np.where(valid, index, -1)
    before = np.maximum.accumulate(before, axis=axis)

    after = np.where(valid, index, size)
    after = np.flip(
        np.minimum.accumulate(np.flip(after, axis=axis), axis=axis), axis=axis
    )
    return before, after


def fill_holes_bilinear(depth: DepthMap) -> DepthMap:
    """
    Fill every invalid pixel from the nearest valid pixels along its row and
    column (up to four neighbours), weighted by inverse distance. Pixels
    with no valid pixel on either axis take the value of the nearest valid
    pixel in the image. Valid input pixels are never altered.

    Raises:
        AllInvalid: if the map has no valid pixel
    """
    valid = depth.valid
    if not np.any(valid):
        raise AllInvalid(depth.shape)
    if np.all(valid):
        return depth

    values = depth.depth
    rows, cols = np.indices(values.shape)
    numerator = np.zeros_like(values)
    weight = np.zeros_like(values)

    for axis, position in ((1, cols), (0, rows)):
        before, after = _nearest_valid_along_axis(valid, axis)
        size = values.shape[axis]
        for neighbour in (before, after):
            present = (neighbour >= 0) & (neighbour < size) & ~valid
            clipped = np.clip(neighbour, 0, size - 1)
            if axis == 1:
                sampled = values[rows, clipped]
            else:
                sampled = values[clipped, cols]
            distance = np.abs(position - neighbour).astype(np.float64)
            inverse = np.where(present, 1.0 / np.where(present, distance, 1.0), 0.0)
            numerator += inverse * sampled
            weight += inverse

    filled = values.copy()
    holes = ~valid
    axis_filled = holes & (weight > 0)
    filled[axis_filled] = numerator[axis_filled] / weight[axis_filled]

    isolated = holes & (weight == 0)
    if np.any(isolated):
        _, (near_r, near_c) = ndimage.distance_transform_edt(
            ~valid, return_indices=True
        )
        filled[isolated] = values[near_r[isolated], near_c[isolated]]

    logger.debug(
        "Holes filled",
        holes=int(np.count_nonzero(holes)),
        isolated=int(np.count_nonzero(isolated)),
    )
    return DepthMap(
        depth=filled,
        valid=np.ones_like(valid),
        interpolated=depth.interpolated | holes,
    )


def grid_normals(
    points: np.ndarray, valid: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, int]:
    """
    Unit normals of an organised (H, W, 3) point grid from the cross product
    of its central-difference tangents (one-sided at the borders), oriented
    towards the camera at the origin (n . p < 0).

    Pixels that are invalid, or have an invalid 4-neighbour, are invalid.

    Returns:
        (normals, valid mask, number of degenerate pixels)
    """
    du = np.gradient(points, axis=1)
    dv = np.gradient(points, axis=0)
    vectors = np.cross(dv, du)

    scale = np.linalg.norm(du, axis=-1) * np.linalg.norm(dv, axis=-1)
    unit, ok = normalize_vectors(vectors)
    floor = DEGENERATE_NORM * np.maximum(scale, DEGENERATE_NORM)
    ok &= np.linalg.norm(vectors, axis=-1) > floor

    support = ndimage.binary_erosion(valid, structure=_CROSS, border_value=1)
    degenerate = int(np.count_nonzero(support & ~ok))
    ok &= support

    facing_away = np.sum(unit * points, axis=-1) > 0
    unit[facing_away] *= -1.0
    unit[~ok] = 0.0
    return unit, ok, degenerate


def depth_to_prior_normals(depth: DepthMap, intr: CameraIntrinsics) -> NormalMap:
    """
    Prior normals from the depth gradient of the backprojected surface.
    Pixels where the tangents are parallel are left invalid.
    """
    points = intr.ray_directions() * depth.depth[..., None]
    normals, ok, degenerate = grid_normals(points, depth.valid)
    if degenerate:
        logger.debug("Degenerate depth gradients", pixels=degenerate)
    return NormalMap(normals=normals, valid=ok)


def image_colors(image: MultispectralImage) -> np.ndarray:
    """Per-pixel colours in [0, 1], scaled by the image maximum."""
    peak = float(image.data.max()) if image.data.size else 0.0
    if peak <= 0:
        return np.zeros_like(image.data)
    return np.clip(image.data / peak, 0.0, 1.0)


def backproject(
    depth: DepthMap,
    intr: CameraIntrinsics,
    pose: CameraPose,
    image: Optional[MultispectralImage] = None,
    keyframe_id: int = -1,
) -> PointCloud:
    """
    One world-frame point per valid pixel, in row-major pixel order:
    camera point ((u - cx) / fx * d, (v - cy) / fy * d, d) mapped by `pose`.
    """
    valid = depth.valid
    camera_points = intr.ray_directions()[valid] * depth.depth[valid][:, None]
    colors = image_colors(image)[valid] if image is not None else None
    return PointCloud(
        positions=pose_apply(pose, camera_points),
        colors=colors,
        keyframe_ids=keyframe_id,
    )


def load_keyframe(
    bundle: KeyframeBundle, prior_smoothing: float = 0.0
) -> PreparedKeyframe:
    """
    Run the full extraction chain on a bundle: inverse depth -> depth,
    scale restoration, hole filling and prior normals.

    `prior_smoothing` is the sigma (pixels) of a Gaussian applied to the
    filled depth before the prior normals are taken; the dense depth itself
    is returned unsmoothed.

    Raises:
        AllInvalid: the keyframe carries no usable depth at all
    """
    semidense = rescale_depth(invdepth_to_depth(bundle.inverse_depth), bundle.scale)
    if prior_smoothing < 0:
        raise ValueError(f"prior_smoothing must be >= 0, got {prior_smoothing}")
    dense = fill_holes_bilinear(semidense)
    prior_depth = dense.depth
    if prior_smoothing > 0:
        prior_depth = ndimage.gaussian_filter(
            prior_depth, sigma=prior_smoothing, mode="nearest"
        )
    points = bundle.intrinsics.ray_directions() * prior_depth[..., None]
    normals, ok, degenerate = grid_normals(points, dense.valid)

    logger.info(
        "Keyframe ingested",
        keyframe_id=bundle.keyframe_id,
        semidense_pixels=semidense.valid_count,
        interpolated_pixels=int(np.count_nonzero(dense.interpolated)),
        prior_normals=int(np.count_nonzero(ok)),
    )
    return PreparedKeyframe(
        bundle=bundle,
        semidense_depth=semidense,
        dense_depth=dense,
        prior_normals=NormalMap(normals=normals, valid=ok),
        pose=bundle.pose.rigid(),
        degenerate_gradients=degenerate,
    )
