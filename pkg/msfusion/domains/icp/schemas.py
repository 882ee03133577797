"""
Pydantic schemas for the ICP domain
"""

from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field, field_validator

from msfusion.core.utils import readonly
from msfusion.domains.geometry.schemas import ArrayModel


class IcpConfig(BaseModel):
    max_iterations: int = Field(50, ge=1)
    convergence_threshold: float = Field(
        1e-6, ge=0, description="Stop once the RMS improves by less than this"
    )
    max_correspondence_distance: float = Field(0.1, gt=0, description="Scene units")
    trim_fraction: float = Field(0.1, ge=0, lt=1)
    min_fitness: float = Field(0.3, ge=0, le=1)


class RigidTransform(ArrayModel):
    """p' = R p + t."""

    rotation: np.ndarray = Field(default_factory=lambda: readonly(np.eye(3)))
    translation: np.ndarray = Field(default_factory=lambda: readonly(np.zeros(3)))

    @field_validator("rotation", mode="before")
    @classmethod
    def check_rotation(cls, v) -> np.ndarray:
        rotation = readonly(v)
        if rotation.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        if not np.allclose(rotation @ rotation.T, np.eye(3), atol=1e-6):
            raise ValueError("rotation must be orthonormal")
        if np.linalg.det(rotation) <= 0:
            raise ValueError("rotation must have determinant +1")
        return rotation

    @field_validator("translation", mode="before")
    @classmethod
    def check_translation(cls, v) -> np.ndarray:
        translation = readonly(np.asarray(v, dtype=np.float64).reshape(-1))
        if translation.shape != (3,):
            raise ValueError("translation must have 3 components")
        return translation

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls()

    def apply_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.rotation.T + self.translation

    def apply_normals(self, normals: np.ndarray) -> np.ndarray:
        return np.asarray(normals, dtype=np.float64).reshape(-1, 3) @ self.rotation.T

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """Apply `other` first, then self."""
        return RigidTransform(
            rotation=self.rotation @ other.rotation,
            translation=self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        return RigidTransform(
            rotation=self.rotation.T, translation=-(self.rotation.T @ self.translation)
        )

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def rotation_angle_deg(self) -> float:
        cos = np.clip((np.trace(self.rotation) - 1.0) / 2.0, -1.0, 1.0)
        return float(np.degrees(np.arccos(cos)))


class Registration(ArrayModel):
    """
    Result of registering a source cloud onto a target. `fitness` is the
    fraction of source points with a target point within the correspondence
    distance; `rms_trace` holds the trimmed RMS after every accepted step.
    """

    transform: RigidTransform
    fitness: float = Field(ge=0, le=1)
    rms: float = Field(ge=0)
    iterations: int = Field(ge=0)
    rms_trace: Tuple[float, ...] = ()
