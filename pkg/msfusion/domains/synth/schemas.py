"""
Pydantic schemas for the Synth domain
"""

from enum import Enum
from typing import Annotated, List, Literal, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator

from msfusion.core.constants import DEFAULT_IMAGE_SIZE
from msfusion.domains.geometry.schemas import (
    ArrayModel,
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    InverseDepthMap,
    MultispectralImage,
    NormalMap,
)

Vector3 = Tuple[float, float, float]


# ============================================================================
# SCENES
# ============================================================================


class SphereShape(BaseModel):
    kind: Literal["sphere"] = "sphere"
    center: Vector3 = (0.0, 0.0, 0.0)
    radius: float = Field(1.0, gt=0)

    @property
    def anchor(self) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)


class PlaneShape(BaseModel):
    kind: Literal["plane"] = "plane"
    point: Vector3 = (0.0, 0.0, 0.0)
    normal: Vector3 = (0.0, 0.0, 1.0)

    @field_validator("normal")
    @classmethod
    def unit_normal(cls, v: Vector3) -> Vector3:
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-9:
            raise ValueError("plane normal must be unit length")
        return v

    @property
    def anchor(self) -> np.ndarray:
        return np.asarray(self.point, dtype=np.float64)


class HeightfieldShape(BaseModel):
    """
    z = base_z + amplitude * sin(f (x - x0)) * sin(f (y - y0)) over
    |x - x0|, |y - y0| <= extent.
    """

    kind: Literal["heightfield"] = "heightfield"
    amplitude: float = 0.2
    frequency: float = Field(3.0, gt=0)
    base: Vector3 = (0.0, 0.0, 0.0)
    extent: float = Field(1.0, gt=0)

    @property
    def anchor(self) -> np.ndarray:
        return np.asarray(self.base, dtype=np.float64)


Shape = Annotated[
    Union[SphereShape, PlaneShape, HeightfieldShape], Field(discriminator="kind")
]


class AlbedoLayout(str, Enum):
    UNIFORM = "uniform"
    # region 0 where world x < anchor x, region 1 elsewhere
    LEFT_RIGHT = "left_right"


class SceneSpec(BaseModel):
    """
    One analytic shape on an empty background with per-region chromatic
    albedo. The optional texture is achromatic: it multiplies all channels
    alike, drawing dark grid lines of spacing pi / texture_frequency.
    """

    shape: Shape = Field(default_factory=SphereShape)
    albedos: List[Vector3] = Field(default_factory=lambda: [(0.8, 0.8, 0.8)])
    layout: AlbedoLayout = AlbedoLayout.UNIFORM
    texture_contrast: float = Field(0.0, ge=0, lt=1)
    texture_frequency: float = Field(10.0, gt=0)
    texture_sharpness: float = Field(20.0, gt=0)

    @field_validator("albedos")
    @classmethod
    def albedo_range(cls, v: List[Vector3]) -> List[Vector3]:
        for albedo in v:
            if min(albedo) < 0 or max(albedo) > 1:
                raise ValueError("albedo components must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def regions_match_layout(self) -> "SceneSpec":
        needed = 1 if self.layout == AlbedoLayout.UNIFORM else 2
        if len(self.albedos) != needed:
            raise ValueError(f"layout {self.layout.value} needs {needed} albedo(s)")
        return self


# ============================================================================
# LIGHTS
# ============================================================================


class DirectionalLight(BaseModel):
    """Direction the light travels (towards the surface) in the camera frame."""

    direction: Vector3
    intensity: Vector3

    @field_validator("direction")
    @classmethod
    def unit_direction(cls, v: Vector3) -> Vector3:
        if abs(float(np.linalg.norm(v)) - 1.0) > 1e-9:
            raise ValueError("light direction must be unit length")
        return v

    @field_validator("intensity")
    @classmethod
    def non_negative(cls, v: Vector3) -> Vector3:
        if min(v) < 0:
            raise ValueError("light intensities must be non-negative")
        return v


class LightRig(BaseModel):
    """Three directional lights rigidly attached to the camera."""

    lights: List[DirectionalLight] = Field(min_length=3, max_length=3)

    @classmethod
    def default(cls, tilt_deg: float = 30.0, intensity: float = 1.0) -> "LightRig":
        """
        Lights tilted `tilt_deg` off the optical axis at azimuths 0, 120 and
        240 degrees; light i emits only in channel i.
        """
        tilt = np.radians(tilt_deg)
        lights = []
        for channel, azimuth_deg in enumerate((0.0, 120.0, 240.0)):
            azimuth = np.radians(azimuth_deg)
            direction = (
                float(np.sin(tilt) * np.cos(azimuth)),
                float(np.sin(tilt) * np.sin(azimuth)),
                float(np.cos(tilt)),
            )
            emission = [0.0, 0.0, 0.0]
            emission[channel] = intensity
            lights.append(
                DirectionalLight(direction=direction, intensity=tuple(emission))
            )
        return cls(lights=lights)

    def directions(self) -> np.ndarray:
        return np.array([light.direction for light in self.lights], dtype=np.float64)

    def intensities(self) -> np.ndarray:
        return np.array([light.intensity for light in self.lights], dtype=np.float64)

    def shading_matrix(self) -> np.ndarray:
        """sum_j E_j (-l_j)^T: channel radiance of a unit-albedo, unshadowed normal."""
        return self.intensities().T @ (-self.directions())


# ============================================================================
# RESULTS
# ============================================================================


class SyntheticRender(ArrayModel):
    """
    One rendered view. `regions` is the albedo region per pixel (-1 on the
    background); `shadow` flags pixels where any light is clamped.
    """

    image: MultispectralImage
    depth: DepthMap
    normals: NormalMap
    regions: np.ndarray
    shadow: np.ndarray


class SynthConfig(BaseModel):
    scene: SceneSpec = Field(default_factory=SceneSpec)
    tilt_deg: float = Field(30.0, gt=0, lt=90)
    n_keyframes: int = Field(1, ge=1)
    orbit_radius: float = Field(3.0, gt=0)
    target: Vector3 = (0.0, 0.0, 0.0)
    arc_deg: float = Field(360.0, gt=0, le=360)
    image_size: int = Field(DEFAULT_IMAGE_SIZE, ge=8)
    focal: Optional[float] = Field(None, gt=0, description="Defaults to the image size")
    grad_threshold: float = Field(0.02, ge=0)
    noise_fraction: float = Field(
        0.0,
        ge=0,
        description="Inverse-depth noise sigma as a fraction of the mean inverse depth",
    )
    seed: int = 0

    def intrinsics(self) -> CameraIntrinsics:
        focal = self.focal or float(self.image_size)
        centre = (self.image_size - 1) / 2.0
        return CameraIntrinsics(
            fx=focal,
            fy=focal,
            cx=centre,
            cy=centre,
            width=self.image_size,
            height=self.image_size,
        )


class SyntheticKeyframe(ArrayModel):
    keyframe_id: int
    pose: CameraPose
    render: SyntheticRender
    inverse_depth: InverseDepthMap


class SyntheticSequence(ArrayModel):
    config: SynthConfig
    intrinsics: CameraIntrinsics
    rig: LightRig
    keyframes: List[SyntheticKeyframe]
    mixing: List[np.ndarray]
