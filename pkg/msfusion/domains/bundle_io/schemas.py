"""
Pydantic schemas for the Bundle I/O domain
"""

from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field

from msfusion.domains.geometry.schemas import ArrayModel, DepthMap, NormalMap

BUNDLE_FORMAT_VERSION = 1


class BundleMetadata(BaseModel):
    """Contents of bundle.json. Keys of the per-keyframe maps are keyframe ids."""

    format_version: int = BUNDLE_FORMAT_VERSION
    image_scale: Dict[int, float] = Field(
        default_factory=dict, description="Radiance per 8-bit image unit"
    )
    semidense_fraction: Dict[int, float] = Field(
        default_factory=dict, description="Semi-dense pixels over object pixels"
    )
    seed: Optional[int] = None

    def scale_for(self, keyframe_id: int) -> float:
        return self.image_scale.get(keyframe_id, 1.0 / 255.0)


class GroundTruthFrame(ArrayModel):
    """Exact depth, camera-frame normals and attached-shadow mask of one keyframe."""

    keyframe_id: int
    depth: DepthMap
    normals: NormalMap
    shadow: Optional[np.ndarray] = None


class GroundTruthMixing(BaseModel):
    albedos: List[List[float]]
    matrices: List[List[List[float]]]

    def as_arrays(self) -> List[np.ndarray]:
        return [np.asarray(m, dtype=np.float64) for m in self.matrices]
