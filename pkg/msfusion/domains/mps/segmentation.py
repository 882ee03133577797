"""
Chromaticity segmentation backends.

Every backend takes a per-pixel feature image (chromaticity), a boolean
mask of pixels to label and the config, and returns raw integer cluster
ids (>= 1 on masked pixels, 0 elsewhere). Merging, size filtering and
final relabelling are shared and live in the service.
"""

from typing import Callable, Dict

import numpy as np
from skimage.segmentation import slic
from sklearn.cluster import KMeans

from msfusion.domains.mps.schemas import SegmentationBackend, SegmentationConfig

Backend = Callable[[np.ndarray, np.ndarray, np.ndarray, SegmentationConfig], np.ndarray]


def _cluster(features: np.ndarray, n_clusters: int, cfg: SegmentationConfig) -> KMeans:
    """Seeded k-means on a deterministic subsample of `features` (N, 3)."""
    distinct = np.unique(np.round(features, 9), axis=0).shape[0]
    n_clusters = max(1, min(n_clusters, distinct))

    rng = np.random.default_rng(cfg.seed)
    if features.shape[0] > cfg.max_samples:
        index = np.sort(rng.choice(features.shape[0], cfg.max_samples, replace=False))
        sample = features[index]
    else:
        sample = features
    return KMeans(n_clusters=n_clusters, n_init=4, random_state=cfg.seed).fit(sample)


def _superpixel_means(
    features: np.ndarray, superpixels: np.ndarray, members: np.ndarray, size: int
) -> np.ndarray:
    """(size, 3) mean feature per superpixel id over `members`; NaN rows where empty."""
    ids = superpixels[members]
    counts = np.bincount(ids, minlength=size).astype(np.float64)
    chosen = features[members]
    sums = np.stack(
        [np.bincount(ids, weights=chosen[:, c], minlength=size) for c in range(3)],
        axis=1,
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        return sums / counts[:, None]


def kmeans_backend(
    features: np.ndarray,
    mask: np.ndarray,
    fit_mask: np.ndarray,
    cfg: SegmentationConfig,
) -> np.ndarray:
    """k-means fitted on the chromaticity of `fit_mask` pixels.

    Every masked pixel is assigned a cluster.
    """
    labels = np.zeros(mask.shape, dtype=np.int64)
    if not np.any(mask):
        return labels
    source = fit_mask if np.any(fit_mask) else mask
    model = _cluster(features[source], cfg.n_clusters, cfg)
    labels[mask] = model.predict(features[mask]) + 1
    return labels


def slic_backend(
    features: np.ndarray,
    mask: np.ndarray,
    fit_mask: np.ndarray,
    cfg: SegmentationConfig,
) -> np.ndarray:
    """
    SLIC superpixels on the chromaticity image, then k-means over the
    superpixel mean chromaticities.
    """
    labels = np.zeros(mask.shape, dtype=np.int64)
    if not np.any(mask):
        return labels
    superpixels = slic(
        features,
        n_segments=cfg.slic_segments,
        compactness=cfg.slic_compactness,
        mask=mask,
        start_label=1,
        convert2lab=False,
        channel_axis=-1,
    )
    source = fit_mask if np.any(fit_mask) else mask
    ids = np.unique(superpixels[mask])
    ids = ids[ids > 0]
    size = int(superpixels.max()) + 1
    fitted = _superpixel_means(features, superpixels, source & mask, size)
    fallback = _superpixel_means(features, superpixels, mask, size)
    means = np.where(np.isnan(fitted), fallback, fitted)[ids]

    model = _cluster(means, cfg.n_clusters, cfg)
    lookup = np.zeros(size, dtype=np.int64)
    lookup[ids] = model.predict(means) + 1
    labels[mask] = lookup[superpixels[mask]]
    # pixels slic left unlabelled inside the mask fall back to nearest centroid
    orphans = mask & (labels == 0)
    if np.any(orphans):
        labels[orphans] = model.predict(features[orphans]) + 1
    return labels


BACKENDS: Dict[SegmentationBackend, Backend] = {
    SegmentationBackend.KMEANS: kmeans_backend,
    SegmentationBackend.SLIC: slic_backend,
}


def get_backend(name: SegmentationBackend) -> Backend:
    return BACKENDS[SegmentationBackend(name)]
