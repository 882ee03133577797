"""
Pydantic schemas for the Ingest domain
"""

from typing import Optional

import numpy as np
from pydantic import Field, field_validator, model_validator

from msfusion.core.utils import readonly
from msfusion.domains.geometry.schemas import (
    ArrayModel,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    InverseDepthMap,
    MultispectralImage,
    NormalMap,
)


class KeyframeBundle(ArrayModel):
    """Everything the SLAM side publishes for one keyframe."""

    keyframe_id: int = Field(ge=0)
    image: MultispectralImage
    inverse_depth: InverseDepthMap
    pose: CameraPose
    scale: float = Field(
        gt=0, description="SLAM depth scale (inverse depths have mean one)"
    )
    intrinsics: CameraIntrinsics
    labels: Optional[np.ndarray] = Field(
        None, description="User-supplied segment labels overriding segmentation"
    )

    @field_validator("labels", mode="before")
    @classmethod
    def as_labels(cls, v):
        if v is None:
            return None
        return readonly(v, dtype=np.int64)

    @model_validator(mode="after")
    def check_dimensions(self) -> "KeyframeBundle":
        if self.image.shape != self.inverse_depth.shape:
            raise ValueError(
                f"image {self.image.shape} and inverse depth "
                f"{self.inverse_depth.shape} differ"
            )
        if self.image.shape != self.intrinsics.shape:
            raise ValueError("intrinsics size does not match the image")
        if self.labels is not None and self.labels.shape != self.image.shape:
            raise ValueError("label map size does not match the image")
        return self


class PreparedKeyframe(ArrayModel):
    """
    Output of the ingest chain for one keyframe. `semidense_depth` is the
    rescaled SLAM depth before hole filling; `dense_depth` is hole-filled and
    flags interpolated pixels; `pose` is rigid because the scale has been
    folded into the depths.
    """

    bundle: KeyframeBundle
    semidense_depth: DepthMap
    dense_depth: DepthMap
    prior_normals: NormalMap
    pose: CameraPose
    degenerate_gradients: int = 0

    @property
    def keyframe_id(self) -> int:
        return self.bundle.keyframe_id
