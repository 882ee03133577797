"""
Pydantic schemas for the Geometry domain

Every container is frozen and keeps its arrays read-only, so instances can
be shared freely between pipeline stages and worker threads.
"""

from typing import Any, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from msfusion.core.constants import UNIT_NORMAL_TOLERANCE
from msfusion.core.utils import normalize_vectors, readonly
from msfusion.domains.geometry.quaternion import (
    normalize_quaternion,
    quat_to_rotation,
    rotation_to_quat,
)


class ArrayModel(BaseModel):
    """Base for frozen models holding numpy arrays."""

    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)


# ============================================================================
# POSES AND CAMERAS
# ============================================================================


class CameraPose(ArrayModel):
    """
    Similarity transform mapping camera-frame coordinates into the world
    frame: p_world = s * R @ p_cam + t.
    """

    quaternion: Tuple[float, float, float, float] = Field(
        (1.0, 0.0, 0.0, 0.0), description="Rotation as unit quaternion (w, x, y, z)"
    )
    translation: Tuple[float, float, float] = Field(
        (0.0, 0.0, 0.0), description="Translation t in scene units"
    )
    scale: float = Field(1.0, gt=0, description="Similarity scale s")

    @field_validator("quaternion", mode="before")
    @classmethod
    def normalize(cls, v: Any) -> Tuple[float, ...]:
        return tuple(float(c) for c in normalize_quaternion(v))

    @field_validator("translation", mode="before")
    @classmethod
    def as_triple(cls, v: Any) -> Tuple[float, ...]:
        values = np.asarray(v, dtype=np.float64).reshape(-1)
        if values.shape != (3,) or not np.all(np.isfinite(values)):
            raise ValueError("translation must be 3 finite values")
        return tuple(float(c) for c in values)

    @classmethod
    def identity(cls) -> "CameraPose":
        return cls()

    @classmethod
    def from_rotation_matrix(
        cls, rotation: np.ndarray, translation: Sequence[float], scale: float = 1.0
    ) -> "CameraPose":
        return cls(
            quaternion=rotation_to_quat(rotation),
            translation=translation,
            scale=scale,
        )

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_rotation(self.quaternion)

    @property
    def t(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix [[sR, t], [0, 1]]."""
        m = np.eye(4)
        m[:3, :3] = self.scale * self.rotation
        m[:3, 3] = self.t
        return m

    def rigid(self) -> "CameraPose":
        """The same pose with the scale dropped."""
        return CameraPose(quaternion=self.quaternion, translation=self.translation)


class CameraIntrinsics(ArrayModel):
    """Pinhole intrinsics: +z forward, +x right, +y down, pixel centres at integers."""

    fx: float = Field(gt=0)
    fy: float = Field(gt=0)
    cx: float = Field(ge=0)
    cy: float = Field(ge=0)
    width: int = Field(gt=0)
    height: int = Field(gt=0)

    @model_validator(mode="after")
    def principal_point_inside(self) -> "CameraIntrinsics":
        if not self.cx < self.width:
            raise ValueError(f"cx={self.cx} must be < width={self.width}")
        if not self.cy < self.height:
            raise ValueError(f"cy={self.cy} must be < height={self.height}")
        return self

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def ray_directions(self) -> np.ndarray:
        """(H, W, 3) camera-frame rays with z = 1, so depth scales them directly."""
        v, u = np.mgrid[0 : self.height, 0 : self.width].astype(np.float64)
        rays = np.empty((self.height, self.width, 3))
        rays[..., 0] = (u - self.cx) / self.fx
        rays[..., 1] = (v - self.cy) / self.fy
        rays[..., 2] = 1.0
        return rays

    def project(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Project camera-frame points.

        Returns:
            (u, v, z) arrays; u and v are NaN where z <= 0.
        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        z = points[:, 2]
        in_front = z > 0
        safe_z = np.where(in_front, z, 1.0)
        u = np.where(in_front, self.fx * points[:, 0] / safe_z + self.cx, np.nan)
        v = np.where(in_front, self.fy * points[:, 1] / safe_z + self.cy, np.nan)
        return u, v, z


# ============================================================================
# IMAGES
# ============================================================================


class MultispectralImage(ArrayModel):
    """H x W x 3 linear radiance; channel i is the response to coloured light i."""

    data: np.ndarray

    @field_validator("data", mode="before")
    @classmethod
    def check_data(cls, v: Any) -> np.ndarray:
        data = readonly(v)
        if data.ndim != 3 or data.shape[2] != 3:
            raise ValueError(f"expected an H x W x 3 image, got shape {data.shape}")
        if not np.all(np.isfinite(data)) or np.any(data < 0):
            raise ValueError("radiance must be finite and non-negative")
        return data

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    def scaled(self, factor: float) -> "MultispectralImage":
        return MultispectralImage(data=self.data * factor)


class DepthMap(ArrayModel):
    """
    Per-pixel depth along +z with an explicit validity mask. Invalid pixels
    hold exactly 0. `interpolated` flags depths produced by hole filling.
    """

    depth: np.ndarray
    valid: np.ndarray
    interpolated: Optional[np.ndarray] = None

    @field_validator("depth", mode="before")
    @classmethod
    def check_depth(cls, v: Any) -> np.ndarray:
        depth = readonly(v)
        if depth.ndim != 2:
            raise ValueError(f"depth must be 2-D, got shape {depth.shape}")
        return depth

    @field_validator("valid", "interpolated", mode="before")
    @classmethod
    def as_mask(cls, v: Any) -> Optional[np.ndarray]:
        if v is None:
            return None
        return readonly(v, dtype=bool)

    @model_validator(mode="after")
    def check_consistency(self) -> "DepthMap":
        if self.valid.shape != self.depth.shape:
            raise ValueError("valid mask shape does not match depth")
        if self.interpolated is None:
            object.__setattr__(
                self, "interpolated", readonly(np.zeros_like(self.valid))
            )
        elif self.interpolated.shape != self.depth.shape:
            raise ValueError("interpolated mask shape does not match depth")
        values = self.depth[self.valid]
        if values.size and not (np.all(np.isfinite(values)) and np.all(values > 0)):
            raise ValueError("valid depths must be finite and > 0")
        if np.any(self.depth[~self.valid] != 0):
            raise ValueError("invalid pixels must carry depth 0")
        return self

    @classmethod
    def from_values(
        cls, depth: np.ndarray, valid: Optional[np.ndarray] = None
    ) -> "DepthMap":
        """Build from raw depths.

        Pixels that are not finite and > 0, or lie outside `valid`, become invalid.
        """
        depth = np.asarray(depth, dtype=np.float64)
        ok = np.isfinite(depth) & (depth > 0)
        if valid is not None:
            ok &= np.asarray(valid, dtype=bool)
        return cls(depth=np.where(ok, depth, 0.0), valid=ok)

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.depth.shape[0]), int(self.depth.shape[1]))

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))


class InverseDepthMap(ArrayModel):
    """Per-pixel inverse depth; NaN encodes a missing estimate. Any value is legal."""

    values: np.ndarray

    @field_validator("values", mode="before")
    @classmethod
    def check_values(cls, v: Any) -> np.ndarray:
        values = readonly(v)
        if values.ndim != 2:
            raise ValueError(f"inverse depth must be 2-D, got shape {values.shape}")
        return values

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.values.shape[0]), int(self.values.shape[1]))

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def present_count(self) -> int:
        return int(np.count_nonzero(~self.missing))


class NormalMap(ArrayModel):
    """Per-pixel unit normals in the camera frame; invalid pixels hold zeros."""

    normals: np.ndarray
    valid: np.ndarray

    @field_validator("normals", mode="before")
    @classmethod
    def check_normals(cls, v: Any) -> np.ndarray:
        normals = readonly(v)
        if normals.ndim != 3 or normals.shape[2] != 3:
            raise ValueError(f"expected H x W x 3 normals, got shape {normals.shape}")
        return normals

    @field_validator("valid", mode="before")
    @classmethod
    def as_mask(cls, v: Any) -> np.ndarray:
        return readonly(v, dtype=bool)

    @model_validator(mode="after")
    def check_unit(self) -> "NormalMap":
        if self.valid.shape != self.normals.shape[:2]:
            raise ValueError("valid mask shape does not match normals")
        norms = np.linalg.norm(self.normals[self.valid], axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > UNIT_NORMAL_TOLERANCE:
            raise ValueError("valid normals must be unit length")
        return self

    @classmethod
    def from_vectors(
        cls, vectors: np.ndarray, valid: Optional[np.ndarray] = None
    ) -> "NormalMap":
        """Normalise raw vectors.

        Degenerate vectors and pixels outside `valid` become invalid.
        """
        unit, ok = normalize_vectors(vectors)
        if valid is not None:
            ok &= np.asarray(valid, dtype=bool)
        unit[~ok] = 0.0
        return cls(normals=unit, valid=ok)

    @property
    def shape(self) -> Tuple[int, int]:
        return (int(self.normals.shape[0]), int(self.normals.shape[1]))

    @property
    def valid_count(self) -> int:
        return int(np.count_nonzero(self.valid))


# ============================================================================
# POINT CLOUDS
# ============================================================================


class PointCloud(ArrayModel):
    """
    Points with optional per-point unit normals, colours in [0, 1] and the id
    of the keyframe each point came from (-1 when unknown).
    """

    positions: np.ndarray
    normals: Optional[np.ndarray] = None
    has_normal: Optional[np.ndarray] = None
    colors: Optional[np.ndarray] = None
    keyframe_ids: Optional[np.ndarray] = None

    @field_validator("positions", mode="before")
    @classmethod
    def check_positions(cls, v: Any) -> np.ndarray:
        positions = readonly(np.asarray(v, dtype=np.float64).reshape(-1, 3))
        if not np.all(np.isfinite(positions)):
            raise ValueError("positions must be finite")
        return positions

    @model_validator(mode="before")
    @classmethod
    def fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        positions = np.asarray(data["positions"], dtype=np.float64).reshape(-1, 3)
        count = positions.shape[0]
        data = dict(data)
        if data.get("normals") is None:
            data["normals"] = np.zeros((count, 3))
            data["has_normal"] = np.zeros(count, dtype=bool)
        elif data.get("has_normal") is None:
            data["has_normal"] = (
                np.linalg.norm(np.asarray(data["normals"]), axis=-1) > 0
            )
        if data.get("keyframe_ids") is None:
            data["keyframe_ids"] = np.full(count, -1, dtype=np.int64)
        elif np.isscalar(data["keyframe_ids"]):
            data["keyframe_ids"] = np.full(
                count, int(data["keyframe_ids"]), dtype=np.int64
            )
        return data

    @model_validator(mode="after")
    def check_attributes(self) -> "PointCloud":
        count = self.positions.shape[0]
        normals = readonly(np.asarray(self.normals, dtype=np.float64).reshape(-1, 3))
        has_normal = readonly(self.has_normal, dtype=bool)
        keyframe_ids = readonly(self.keyframe_ids, dtype=np.int64)
        if normals.shape[0] != count or has_normal.shape != (count,):
            raise ValueError("normals do not match the number of points")
        if keyframe_ids.shape != (count,):
            raise ValueError("keyframe_ids do not match the number of points")
        norms = np.linalg.norm(normals[has_normal], axis=-1)
        if norms.size and np.max(np.abs(norms - 1.0)) > UNIT_NORMAL_TOLERANCE:
            raise ValueError("attached normals must be unit length")
        normals = np.where(has_normal[:, None], normals, 0.0)
        normals.flags.writeable = False
        object.__setattr__(self, "normals", normals)
        object.__setattr__(self, "has_normal", has_normal)
        object.__setattr__(self, "keyframe_ids", keyframe_ids)
        if self.colors is not None:
            colors = readonly(np.asarray(self.colors, dtype=np.float64).reshape(-1, 3))
            if colors.shape[0] != count:
                raise ValueError("colors do not match the number of points")
            if colors.size and (colors.min() < 0 or colors.max() > 1):
                raise ValueError("colors must lie in [0, 1]")
            object.__setattr__(self, "colors", colors)
        return self

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(positions=np.zeros((0, 3)))

    def __len__(self) -> int:
        return int(self.positions.shape[0])

    @property
    def normal_count(self) -> int:
        return int(np.count_nonzero(self.has_normal))

    def subset(self, index: np.ndarray) -> "PointCloud":
        """Points selected by a boolean mask or an index array, in that order."""
        return PointCloud(
            positions=self.positions[index],
            normals=self.normals[index],
            has_normal=self.has_normal[index],
            colors=None if self.colors is None else self.colors[index],
            keyframe_ids=self.keyframe_ids[index],
        )

    def with_geometry(self, positions: np.ndarray, normals: np.ndarray) -> "PointCloud":
        """Same attributes, new positions and normals (presence flags kept)."""
        return PointCloud(
            positions=positions,
            normals=normals,
            has_normal=self.has_normal,
            colors=self.colors,
            keyframe_ids=self.keyframe_ids,
        )

    @staticmethod
    def concatenate(clouds: Sequence["PointCloud"]) -> "PointCloud":
        clouds = [c for c in clouds if len(c)]
        if not clouds:
            return PointCloud.empty()
        with_colors = all(c.colors is not None for c in clouds)
        return PointCloud(
            positions=np.concatenate([c.positions for c in clouds]),
            normals=np.concatenate([c.normals for c in clouds]),
            has_normal=np.concatenate([c.has_normal for c in clouds]),
            colors=np.concatenate([c.colors for c in clouds]) if with_colors else None,
            keyframe_ids=np.concatenate([c.keyframe_ids for c in clouds]),
        )
