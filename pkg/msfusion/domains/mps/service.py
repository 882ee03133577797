from typing import Dict, Optional, Tuple

import numpy as np

from msfusion.core.error_handlers import AppException, InputValidationError
from msfusion.core.logging_config import get_logger
from msfusion.domains.geometry.schemas import MultispectralImage, NormalMap
from msfusion.domains.mps.exceptions import (
    DegeneratePriors,
    InsufficientPriors,
    SingularMixing,
)
from msfusion.domains.mps.schemas import (
    MixingConfig,
    MixingEstimator,
    MixingModel,
    SegmentationConfig,
)
from msfusion.domains.mps.segmentation import get_backend

logger = get_logger(__name__)

SHADOW_FRACTION = 0.02
# Predicted shading below this fraction of its channel maximum is too dark to divide by
SHADING_FLOOR = 0.1

Centroids = Dict[int, Tuple[float, float, float]]


# ============================================================================
# SHADOWS AND CHROMATICITY
# ============================================================================


def default_shadow_threshold(img: MultispectralImage) -> float:
    """2% of the brightest channel value in the image."""
    return SHADOW_FRACTION * float(img.data.max()) if img.data.size else 0.0


def shadow_mask(
    img: MultispectralImage, threshold: Optional[float] = None
) -> np.ndarray:
    """
    Per-pixel validity: True where every channel reaches `threshold`.

    A pixel with any channel below the threshold is lit by fewer than three
    lights, so the linear shading model does not hold there.
    """
    if threshold is None:
        threshold = default_shadow_threshold(img)
    if threshold < 0:
        raise InputValidationError(
            f"Shadow threshold must be >= 0, got {threshold}",
            error_code="INVALID_SHADOW_THRESHOLD",
            details={"threshold": threshold},
        )
    return np.all(img.data >= threshold, axis=-1)


def fit_global_shading(
    img: MultispectralImage,
    priors: NormalMap,
    mask: np.ndarray,
    interpolated: Optional[np.ndarray] = None,
    cfg: Optional[MixingConfig] = None,
) -> Optional[np.ndarray]:
    """
    Shading predicted by a single mixing matrix fitted over the whole image,
    M_g @ n_prior per pixel (zero where the prior is invalid). None when the
    priors cannot support a fit.
    """
    labels = np.where(mask & priors.valid, 1, 0)
    try:
        model = estimate_mixing(
            img, priors, labels, cfg=cfg, mask=mask, interpolated=interpolated
        )
    except AppException as exc:
        logger.debug("Global shading fit failed", error_code=exc.error_code)
        return None
    shading = priors.normals @ model.matrices[1].T
    shading[~priors.valid] = 0.0
    return shading


def chromaticity_features(
    img: MultispectralImage, shading: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Channel-normalised colour C / sum(C), optionally computed on C / shading
    so that a single albedo does not vary with the surface orientation.

    Returns:
        (features (H, W, 3), reliable mask). Zero-sum pixels have zero
        features and are unreliable; with shading, so are pixels whose
        predicted shading is too dark in any channel.
    """
    colour = img.data
    reliable = np.ones(img.shape, dtype=bool)
    if shading is not None:
        peak = np.maximum(shading.reshape(-1, 3).max(axis=0), 1e-12)
        floor = SHADING_FLOOR * peak
        reliable = np.all(shading > floor, axis=-1)
        colour = colour / np.maximum(shading, floor)

    total = colour.sum(axis=-1)
    nonzero = total > 0
    features = np.zeros_like(colour)
    features[nonzero] = colour[nonzero] / total[nonzero, None]
    return features, reliable & nonzero


def segment_centroids(features: np.ndarray, labels: np.ndarray) -> Centroids:
    """Mean feature per non-zero label."""
    centroids: Centroids = {}
    for label in np.unique(labels):
        if label <= 0:
            continue
        mean = features[labels == label].mean(axis=0)
        centroids[int(label)] = (float(mean[0]), float(mean[1]), float(mean[2]))
    return centroids


# ============================================================================
# SEGMENTATION
# ============================================================================


def _merge_clusters(
    raw: np.ndarray, features: np.ndarray, fit_mask: np.ndarray, cfg: SegmentationConfig
) -> np.ndarray:
    """
    Merge raw clusters whose centroids are closer than `merge_distance`,
    then fold clusters smaller than `min_size` into the chromatically
    nearest remaining one.
    """
    counts: Dict[int, int] = {}
    centroids: Dict[int, np.ndarray] = {}
    for cluster in np.unique(raw[raw > 0]):
        members = raw == cluster
        fitted = members & fit_mask
        counts[int(cluster)] = int(np.count_nonzero(members))
        centroids[int(cluster)] = features[fitted if np.any(fitted) else members].mean(
            axis=0
        )

    parent = {c: c for c in counts}

    def absorb(keep: int, drop: int) -> None:
        total = counts[keep] + counts[drop]
        centroids[keep] = (
            (counts[keep] * centroids[keep] + counts[drop] * centroids[drop]) / total
        )
        counts[keep] = total
        parent[drop] = keep
        del counts[drop], centroids[drop]

    while len(counts) > 1:
        ids = sorted(counts)
        best = None
        for i, a in enumerate(ids):
            for b in ids[i + 1 :]:
                distance = float(np.linalg.norm(centroids[a] - centroids[b]))
                if best is None or distance < best[0]:
                    best = (distance, a, b)
        if best[0] >= cfg.merge_distance:
            break
        _, a, b = best
        keep, drop = (a, b) if counts[a] >= counts[b] else (b, a)
        absorb(keep, drop)

    while len(counts) > 1:
        smallest = min(sorted(counts), key=lambda c: counts[c])
        if counts[smallest] >= cfg.min_size:
            break
        others = [c for c in sorted(counts) if c != smallest]
        nearest = min(
            others,
            key=lambda c: float(np.linalg.norm(centroids[c] - centroids[smallest])),
        )
        absorb(nearest, smallest)

    def root(c: int) -> int:
        while parent[c] != c:
            c = parent[c]
        return c

    lookup = np.zeros(int(raw.max()) + 1, dtype=np.int64)
    for cluster in parent:
        lookup[cluster] = root(cluster)
    return lookup[raw]


def _relabel_raster(labels: np.ndarray) -> np.ndarray:
    """Renumber non-zero labels 1..k' in order of first occurrence (row-major)."""
    flat = labels.ravel()
    values, first = np.unique(flat, return_index=True)
    order = [v for _, v in sorted(zip(first, values)) if v > 0]
    lookup = np.zeros(int(values.max()) + 1 if values.size else 1, dtype=np.int64)
    for new, old in enumerate(order, start=1):
        lookup[old] = new
    return lookup[labels]


def segment_chromaticity(
    img: MultispectralImage,
    cfg: Optional[SegmentationConfig] = None,
    mask: Optional[np.ndarray] = None,
    shading: Optional[np.ndarray] = None,
) -> np.ndarray:
    """
    Label map grouping pixels of equal surface chromaticity.

    Every pixel in `mask` (default: the shadow mask) with non-zero radiance
    gets a label in 1..k', k' <= k; everything else is 0. Deterministic for
    a fixed seed.
    """
    cfg = cfg or SegmentationConfig()
    if mask is None:
        mask = shadow_mask(img)
    features, reliable = chromaticity_features(
        img, shading if cfg.shading_normalized else None
    )
    assignable = mask & (img.data.sum(axis=-1) > 0)
    fit_mask = assignable & reliable

    raw = get_backend(cfg.backend)(features, assignable, fit_mask, cfg)
    if not np.any(raw):
        return raw
    labels = _relabel_raster(_merge_clusters(raw, features, fit_mask, cfg))
    logger.debug(
        "Chromaticity segmented",
        backend=cfg.backend.value,
        segments=int(labels.max()),
        labelled_pixels=int(np.count_nonzero(labels)),
    )
    return labels


# ============================================================================
# MIXING ESTIMATION
# ============================================================================


def _fit_segment(
    radiance: np.ndarray, normals: np.ndarray, estimator: MixingEstimator
) -> np.ndarray:
    """Least-squares M for one segment from (N, 3) radiance and (N, 3) normals."""
    if estimator == MixingEstimator.INVERSE:
        # radiance @ G^T ~= normals
        solution, *_ = np.linalg.lstsq(radiance, normals, rcond=None)
        return np.linalg.inv(solution.T)
    solution, *_ = np.linalg.lstsq(normals, radiance, rcond=None)
    return solution.T


def estimate_mixing(
    img: MultispectralImage,
    priors: NormalMap,
    labels: np.ndarray,
    cfg: Optional[MixingConfig] = None,
    mask: Optional[np.ndarray] = None,
    interpolated: Optional[np.ndarray] = None,
    centroids: Optional[Centroids] = None,
) -> MixingModel:
    """
    Fit one mixing matrix per segment from pixels with a valid prior normal
    (and not interpolated, unless configured otherwise).

    Segments that fail are recorded in `failures` and left unmodelled.

    Raises:
        InsufficientPriors / DegeneratePriors / SingularMixing: the first
            failure, when no segment could be modelled
    """
    cfg = cfg or MixingConfig()
    labels = np.asarray(labels, dtype=np.int64)
    usable = priors.valid & (labels > 0)
    if mask is not None:
        usable &= mask
    if interpolated is not None and cfg.exclude_interpolated:
        usable &= ~interpolated

    matrices: Dict[int, np.ndarray] = {}
    conditions: Dict[int, float] = {}
    failures: Dict[int, str] = {}
    first_error: Optional[AppException] = None

    segments = [int(s) for s in np.unique(labels) if s > 0]
    for segment in segments:
        selected = usable & (labels == segment)
        count = int(np.count_nonzero(selected))
        try:
            if count < cfg.min_priors:
                raise InsufficientPriors(segment, count, cfg.min_priors)
            normals = priors.normals[selected]
            radiance = img.data[selected]
            min_eigenvalue = float(np.linalg.eigvalsh(normals.T @ normals / count)[0])
            if min_eigenvalue <= cfg.min_eigenvalue:
                raise DegeneratePriors(segment, min_eigenvalue)
            try:
                matrix = _fit_segment(radiance, normals, cfg.estimator)
            except np.linalg.LinAlgError:
                raise SingularMixing(segment, float("inf"), cfg.max_condition)
            condition = float(np.linalg.cond(matrix))
            if not np.isfinite(condition) or condition > cfg.max_condition:
                raise SingularMixing(segment, condition, cfg.max_condition)
        except (InsufficientPriors, DegeneratePriors, SingularMixing) as exc:
            failures[segment] = exc.error_code
            first_error = first_error or exc
            logger.debug(
                "Segment left unmodelled", segment=segment, error_code=exc.error_code
            )
            continue
        matrices[segment] = matrix
        conditions[segment] = condition

    if not matrices:
        raise first_error or InsufficientPriors(None, 0, cfg.min_priors)

    logger.debug(
        "Mixing estimated",
        segments=len(matrices),
        failed_segments=len(failures),
        worst_condition=max(conditions.values()),
    )
    return MixingModel(
        labels=labels,
        matrices=matrices,
        condition_numbers=conditions,
        failures=failures,
        centroids=dict(centroids or {}),
        max_condition=cfg.max_condition,
    )


def adopt_mixing(
    reference: MixingModel, labels: np.ndarray, centroids: Centroids
) -> MixingModel:
    """
    Reuse a reference keyframe's mixing matrices on another keyframe: each
    segment takes the matrix of the reference segment with the nearest
    chromaticity centroid.
    """
    candidates = [s for s in reference.segments if s in reference.centroids]
    if not candidates:
        if len(reference.segments) != 1:
            raise InputValidationError(
                "Reference mixing model has no centroids to match segments against",
                error_code="MISSING_CENTROIDS",
            )
        candidates = list(reference.segments)

    matrices: Dict[int, np.ndarray] = {}
    conditions: Dict[int, float] = {}
    for segment in [int(s) for s in np.unique(labels) if s > 0]:
        if len(candidates) == 1 or segment not in centroids:
            match = candidates[0]
        else:
            here = np.asarray(centroids[segment])
            match = min(
                candidates,
                key=lambda s: float(
                    np.linalg.norm(np.asarray(reference.centroids[s]) - here)
                ),
            )
        matrices[segment] = reference.matrices[match]
        conditions[segment] = reference.condition_numbers[match]

    return MixingModel(
        labels=labels,
        matrices=matrices,
        condition_numbers=conditions,
        centroids=dict(centroids),
        max_condition=reference.max_condition,
    )


# ============================================================================
# NORMAL RECOVERY
# ============================================================================


def recover_normals(
    img: MultispectralImage, model: MixingModel, mask: Optional[np.ndarray] = None
) -> NormalMap:
    """
    n = normalize(M^-1 C) per pixel with the matrix of the pixel's segment.
    Pixels outside `mask`, unlabelled, or in unmodelled segments are invalid.

    Raises:
        SingularMixing: a stored matrix exceeds the model's condition limit
    """
    if model.labels.shape != img.shape:
        raise InputValidationError(
            "Label map does not match the image",
            error_code="DIMENSION_MISMATCH",
            details={"labels": list(model.labels.shape), "image": list(img.shape)},
        )
    for segment, condition in model.condition_numbers.items():
        if condition > model.max_condition:
            raise SingularMixing(segment, condition, model.max_condition)

    selected = model.modeled()
    if mask is not None:
        selected &= mask

    top = int(model.labels.max()) if model.labels.size else 0
    inverses = np.tile(np.eye(3), (top + 1, 1, 1))
    for segment in model.segments:
        inverses[segment] = np.linalg.inv(model.matrices[segment])

    vectors = np.zeros(img.data.shape)
    vectors[selected] = np.einsum(
        "pij,pj->pi", inverses[model.labels[selected]], img.data[selected]
    )
    return NormalMap.from_vectors(vectors, valid=selected)
