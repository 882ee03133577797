"""
Pydantic schemas for the MPS domain
"""

from enum import Enum
from typing import Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from msfusion.core.utils import readonly
from msfusion.domains.geometry.schemas import ArrayModel


class SegmentationBackend(str, Enum):
    KMEANS = "kmeans"
    SLIC = "slic"


class MixingEstimator(str, Enum):
    # C ~= M n over the prior normals
    FORWARD = "forward"
    # n ~= G C, M = G^-1; unbiased when the priors are noisier than the image
    INVERSE = "inverse"


class MixingScope(str, Enum):
    KEYFRAME = "keyframe"
    VIDEO = "video"


class SegmentationConfig(BaseModel):
    """
    Chromaticity segmentation settings. Chromaticity is the channel-normalised
    colour C / sum(C), compared with the Euclidean distance.
    """

    n_clusters: int = Field(4, ge=1, description="Maximum number of segments k")
    min_size: int = Field(
        64, ge=1, description="Segments below this pixel count are merged"
    )
    merge_distance: float = Field(
        0.15, ge=0, description="Segments with closer chromaticity centroids are merged"
    )
    backend: SegmentationBackend = SegmentationBackend.KMEANS
    shading_normalized: bool = Field(
        True, description="Divide out the shading predicted from prior normals first"
    )
    seed: int = 0
    max_samples: int = Field(
        20000, ge=1, description="Pixels used to fit the clustering"
    )
    slic_segments: int = Field(400, ge=1)
    slic_compactness: float = Field(0.1, gt=0)


class MixingConfig(BaseModel):
    min_priors: int = Field(9, ge=3)
    min_eigenvalue: float = Field(1e-6, ge=0)
    max_condition: float = Field(1e6, gt=1)
    exclude_interpolated: bool = True
    estimator: MixingEstimator = MixingEstimator.FORWARD
    scope: MixingScope = MixingScope.KEYFRAME
    shadow_threshold: Optional[float] = Field(
        None, ge=0, description="Radiance threshold; None means 2% of the image maximum"
    )


class MixingModel(ArrayModel):
    """
    Per-segment mixing matrices M (unit normal -> radiance) with their
    condition numbers. Label 0 is unassigned. Segments whose estimation
    failed are listed in `failures` with the error code and have no matrix.
    """

    labels: np.ndarray
    matrices: Dict[int, np.ndarray] = Field(default_factory=dict)
    condition_numbers: Dict[int, float] = Field(default_factory=dict)
    failures: Dict[int, str] = Field(default_factory=dict)
    centroids: Dict[int, Tuple[float, float, float]] = Field(default_factory=dict)
    max_condition: float = 1e6

    @field_validator("labels", mode="before")
    @classmethod
    def as_labels(cls, v) -> np.ndarray:
        labels = readonly(v, dtype=np.int64)
        if labels.ndim != 2:
            raise ValueError(f"label map must be 2-D, got shape {labels.shape}")
        return labels

    @field_validator("matrices", mode="before")
    @classmethod
    def as_matrices(cls, v) -> Dict[int, np.ndarray]:
        matrices = {}
        for label, matrix in dict(v).items():
            matrix = readonly(matrix)
            if matrix.shape != (3, 3):
                raise ValueError(f"mixing matrix of segment {label} must be 3x3")
            matrices[int(label)] = matrix
        return matrices

    @property
    def segments(self) -> Tuple[int, ...]:
        return tuple(sorted(self.matrices))

    def modeled(self) -> np.ndarray:
        """Per-pixel flag: the pixel's segment has a mixing matrix."""
        segments = np.asarray(self.segments, dtype=np.int64)
        return np.isin(self.labels, segments) & (self.labels > 0)

