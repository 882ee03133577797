"""
Pydantic schemas for the Fusion domain
"""

from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from msfusion.core.utils import readonly
from msfusion.domains.geometry.schemas import ArrayModel, PointCloud


class FusionConfig(BaseModel):
    """
    Joint optimisation settings. The default 1:3 ratio weights the normal
    term three times the position term.
    """

    weight_position: float = Field(1.0, gt=0)
    weight_normal: float = Field(3.0, ge=0)
    smoothing_radius: int = Field(7, ge=1, description="Boxcar half-width in pixels")
    tolerance: float = Field(1e-8, gt=0, description="Relative residual of the solve")
    max_iterations: int = Field(2000, ge=1)


class FusedSurface(ArrayModel):
    """
    Per-pixel fusion grid of one keyframe, in its camera frame.

    `positions` hold the measurement targets: SLAM points where `sampled`,
    backprojected hole-filled depth elsewhere. Invalid pixels hold zeros.
    `unassociated` keeps SLAM points that found no valid normal pixel.
    """

    positions: np.ndarray
    measured_normals: np.ndarray
    corrected_normals: np.ndarray
    valid: np.ndarray
    sampled: np.ndarray
    colors: Optional[np.ndarray] = None
    keyframe_id: int = -1
    unassociated: PointCloud = Field(default_factory=PointCloud.empty)

    @field_validator(
        "positions", "measured_normals", "corrected_normals", "colors", mode="before"
    )
    @classmethod
    def as_grid(cls, v):
        if v is None:
            return None
        grid = readonly(v)
        if grid.ndim != 3 or grid.shape[2] != 3:
            raise ValueError(f"expected an H x W x 3 grid, got shape {grid.shape}")
        return grid

    @field_validator("valid", "sampled", mode="before")
    @classmethod
    def as_mask(cls, v) -> np.ndarray:
        return readonly(v, dtype=bool)

    @model_validator(mode="after")
    def check_shapes(self) -> "FusedSurface":
        shape = self.valid.shape
        for name in ("positions", "measured_normals", "corrected_normals", "colors"):
            grid = getattr(self, name)
            if grid is not None and grid.shape[:2] != shape:
                raise ValueError(f"{name} does not match the pixel grid")
        if self.sampled.shape != shape:
            raise ValueError("sampled mask does not match the pixel grid")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.valid.shape[0]), int(self.valid.shape[1]))

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))

    @property
    def sampled_count(self) -> int:
        return int(np.count_nonzero(self.valid & self.sampled))

    @property
    def densified_count(self) -> int:
        return int(np.count_nonzero(self.valid & ~self.sampled))


class JointSolution(ArrayModel):
    """Optimised positions of the valid pixels (row-major) with solver statistics."""

    positions: np.ndarray
    iterations: int
    relative_residual: float
    objective_before: float
    objective_after: float
