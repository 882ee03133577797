"""
Bundle repository

Reads and writes the keyframe-bundle directory layout:

    poses.txt               id tx ty tz qx qy qz qw s   (camera-to-world)
    intrinsics.json         fx, fy, cx, cy, width, height
    bundle.json             image radiance scale, semi-dense fraction, seed
    image_%06d.png          8-bit RGB, linear
    invdepth_%06d.pfm       float32, NaN = missing
    labels_%06d.png         optional 16-bit segment labels
    gt/depth_%06d.pfm       exact depth, NaN off the object
    gt/normals_%06d.pfm     exact camera-frame normals, NaN off the object
    gt/shadow_%06d.png      attached-shadow mask
    gt/mixing.json          exact mixing matrix per albedo region

and the reconstruction artifacts (cloud_%06d.ply, global.ply,
metrics.json).
"""

import json
from pathlib import Path
from typing import Any, Dict, List, Optional

import imageio.v3 as iio
import numpy as np
import pydantic

from msfusion.core.logging_config import get_logger
from msfusion.domains.bundle_io.exceptions import (
    BundleFormatError,
    BundleNotFound,
    EmptyBundle,
)
from msfusion.domains.bundle_io.pfm_handler import read_pfm, write_pfm
from msfusion.domains.bundle_io.ply_handler import PLYHandler
from msfusion.domains.bundle_io.schemas import (
    BundleMetadata,
    GroundTruthFrame,
    GroundTruthMixing,
)
from msfusion.domains.geometry.schemas import (
    CameraIntrinsics,
    CameraPose,
    DepthMap,
    InverseDepthMap,
    MultispectralImage,
    NormalMap,
    PointCloud,
)
from msfusion.domains.ingest.schemas import KeyframeBundle
from msfusion.domains.synth.schemas import SyntheticSequence

logger = get_logger(__name__)

POSES_FILE = "poses.txt"
INTRINSICS_FILE = "intrinsics.json"
METADATA_FILE = "bundle.json"
GT_DIR = "gt"
MIXING_FILE = "mixing.json"
GLOBAL_CLOUD_FILE = "global.ply"
METRICS_FILE = "metrics.json"


def _frame_name(prefix: str, keyframe_id: int, suffix: str) -> str:
    return f"{prefix}_{keyframe_id:06d}.{suffix}"


class BundleRepository:
    """Repository for one keyframe-bundle directory"""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._poses: Optional[Dict[int, CameraPose]] = None

    # ==================== READ METHODS ====================

    def ensure_exists(self) -> None:
        if not self.root.is_dir():
            raise BundleNotFound(self.root)

    def read_poses(self) -> Dict[int, CameraPose]:
        """
        Parse poses.txt in file order. The scale column becomes both the
        pose scale and the bundle's depth scale.

        Raises:
            EmptyBundle: no poses.txt and no images, or no pose lines
            BundleFormatError: malformed lines or duplicate ids
        """
        if self._poses is not None:
            return self._poses
        self.ensure_exists()
        path = self.root / POSES_FILE
        if not path.is_file():
            if any(self.root.glob("image_*.png")):
                raise BundleFormatError(path, "images present but poses.txt is missing")
            raise EmptyBundle(self.root)

        poses: Dict[int, CameraPose] = {}
        for number, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split()
            if len(fields) != 9:
                raise BundleFormatError(
                    path, f"line {number}: expected 9 fields, found {len(fields)}"
                )
            try:
                keyframe_id = int(fields[0])
                tx, ty, tz, qx, qy, qz, qw, s = (float(v) for v in fields[1:])
            except ValueError:
                raise BundleFormatError(path, f"line {number}: non-numeric field")
            if keyframe_id in poses:
                raise BundleFormatError(
                    path, f"line {number}: duplicate keyframe id {keyframe_id}"
                )
            poses[keyframe_id] = CameraPose(
                quaternion=(qw, qx, qy, qz), translation=(tx, ty, tz), scale=s
            )

        if not poses:
            raise EmptyBundle(self.root)
        self._poses = poses
        return poses

    def keyframe_ids(self) -> List[int]:
        return list(self.read_poses().keys())

    def read_intrinsics(self) -> CameraIntrinsics:
        path = self.root / INTRINSICS_FILE
        if not path.is_file():
            raise BundleFormatError(path, "intrinsics.json is missing")
        try:
            return CameraIntrinsics.model_validate_json(path.read_text())
        except pydantic.ValidationError as exc:
            raise BundleFormatError(
                path, f"invalid intrinsics: {exc.errors()[0]['msg']}"
            )

    def read_metadata(self) -> BundleMetadata:
        path = self.root / METADATA_FILE
        if not path.is_file():
            return BundleMetadata()
        try:
            return BundleMetadata.model_validate_json(path.read_text())
        except pydantic.ValidationError as exc:
            raise BundleFormatError(
                path, f"invalid bundle metadata: {exc.errors()[0]['msg']}"
            )

    def read_image(
        self, keyframe_id: int, scale: Optional[float] = None
    ) -> MultispectralImage:
        """8-bit image converted to radiance with the recorded scale."""
        path = self.root / _frame_name("image", keyframe_id, "png")
        if not path.is_file():
            raise BundleFormatError(path, f"image of keyframe {keyframe_id} is missing")
        pixels = iio.imread(path)
        if pixels.ndim != 3 or pixels.shape[2] not in (3, 4):
            raise BundleFormatError(
                path, f"expected an RGB image, got shape {pixels.shape}"
            )
        if scale is None:
            scale = self.read_metadata().scale_for(keyframe_id)
        return MultispectralImage(data=pixels[..., :3].astype(np.float64) * scale)

    def read_inverse_depth(self, keyframe_id: int) -> InverseDepthMap:
        path = self.root / _frame_name("invdepth", keyframe_id, "pfm")
        if not path.is_file():
            raise BundleFormatError(
                path, f"inverse depth of keyframe {keyframe_id} is missing"
            )
        values = read_pfm(path)
        if values.ndim != 2:
            raise BundleFormatError(path, "inverse depth must have one channel")
        return InverseDepthMap(values=values)

    def read_labels(self, keyframe_id: int) -> Optional[np.ndarray]:
        path = self.root / _frame_name("labels", keyframe_id, "png")
        if not path.is_file():
            return None
        labels = iio.imread(path)
        if labels.ndim != 2:
            raise BundleFormatError(path, "label map must be single-channel")
        return labels.astype(np.int64)

    def load_bundle(self, keyframe_id: int) -> KeyframeBundle:
        poses = self.read_poses()
        if keyframe_id not in poses:
            raise BundleFormatError(
                self.root / POSES_FILE, f"no pose for keyframe {keyframe_id}"
            )
        pose = poses[keyframe_id]
        metadata = self.read_metadata()
        try:
            return KeyframeBundle(
                keyframe_id=keyframe_id,
                image=self.read_image(keyframe_id, metadata.scale_for(keyframe_id)),
                inverse_depth=self.read_inverse_depth(keyframe_id),
                pose=pose,
                scale=pose.scale,
                intrinsics=self.read_intrinsics(),
                labels=self.read_labels(keyframe_id),
            )
        except pydantic.ValidationError as exc:
            raise BundleFormatError(
                self.root, f"keyframe {keyframe_id}: {exc.errors()[0]['msg']}"
            )

    def has_ground_truth(self) -> bool:
        return (self.root / GT_DIR).is_dir()

    def read_ground_truth(self, keyframe_id: int) -> GroundTruthFrame:
        gt = self.root / GT_DIR
        depth_path = gt / _frame_name("depth", keyframe_id, "pfm")
        normals_path = gt / _frame_name("normals", keyframe_id, "pfm")
        for path in (depth_path, normals_path):
            if not path.is_file():
                raise BundleFormatError(
                    path, f"ground truth of keyframe {keyframe_id} is missing"
                )

        depth = DepthMap.from_values(read_pfm(depth_path))
        raw_normals = read_pfm(normals_path)
        if raw_normals.ndim != 3:
            raise BundleFormatError(normals_path, "normals must have three channels")
        present = np.all(np.isfinite(raw_normals), axis=-1)
        normals = NormalMap.from_vectors(np.nan_to_num(raw_normals), valid=present)

        shadow = None
        shadow_path = gt / _frame_name("shadow", keyframe_id, "png")
        if shadow_path.is_file():
            shadow = iio.imread(shadow_path) > 0
        return GroundTruthFrame(
            keyframe_id=keyframe_id, depth=depth, normals=normals, shadow=shadow
        )

    def read_ground_truth_mixing(self) -> GroundTruthMixing:
        path = self.root / GT_DIR / MIXING_FILE
        if not path.is_file():
            raise BundleFormatError(path, "mixing ground truth is missing")
        return GroundTruthMixing.model_validate_json(path.read_text())

    # ==================== WRITE METHODS ====================

    def write_bundle(self, sequence: SyntheticSequence) -> BundleMetadata:
        """
        Write a synthetic sequence. Inverse depths are normalised to mean
        one and the matching scale goes into poses.txt; images are
        quantised to 8 bits with their radiance scale kept in bundle.json.
        """
        gt = self.root / GT_DIR
        gt.mkdir(parents=True, exist_ok=True)
        self._poses = None

        metadata = BundleMetadata(seed=sequence.config.seed)
        pose_lines = ["# id tx ty tz qx qy qz qw s"]

        for keyframe in sequence.keyframes:
            kid = keyframe.keyframe_id
            render = keyframe.render
            inverse = keyframe.inverse_depth.values
            present = ~np.isnan(inverse)
            mean_inverse = float(np.mean(inverse[present])) if np.any(present) else 1.0
            if mean_inverse <= 0:
                mean_inverse = 1.0
            write_pfm(
                self.root / _frame_name("invdepth", kid, "pfm"), inverse / mean_inverse
            )

            scale = 1.0 / mean_inverse
            w, x, y, z = keyframe.pose.quaternion
            tx, ty, tz = keyframe.pose.translation
            values = " ".join(f"{v:.17g}" for v in (tx, ty, tz, x, y, z, w, scale))
            pose_lines.append(f"{kid} {values}")

            peak = float(render.image.data.max())
            image_scale = peak / 255.0 if peak > 0 else 1.0 / 255.0
            pixels = np.clip(np.rint(render.image.data / image_scale), 0, 255).astype(
                np.uint8
            )
            iio.imwrite(self.root / _frame_name("image", kid, "png"), pixels)
            metadata.image_scale[kid] = image_scale

            object_pixels = render.depth.valid_count
            metadata.semidense_fraction[kid] = (
                keyframe.inverse_depth.present_count / object_pixels
                if object_pixels
                else 0.0
            )

            write_pfm(
                gt / _frame_name("depth", kid, "pfm"),
                np.where(render.depth.valid, render.depth.depth, np.nan),
            )
            write_pfm(
                gt / _frame_name("normals", kid, "pfm"),
                np.where(
                    render.normals.valid[..., None], render.normals.normals, np.nan
                ),
            )
            iio.imwrite(
                gt / _frame_name("shadow", kid, "png"),
                np.where(render.shadow, 255, 0).astype(np.uint8),
            )

        (self.root / POSES_FILE).write_text("\n".join(pose_lines) + "\n")
        (self.root / INTRINSICS_FILE).write_text(
            sequence.intrinsics.model_dump_json(indent=2)
        )
        (self.root / METADATA_FILE).write_text(metadata.model_dump_json(indent=2))
        mixing = GroundTruthMixing(
            albedos=[list(a) for a in sequence.config.scene.albedos],
            matrices=[m.tolist() for m in sequence.mixing],
        )
        (gt / MIXING_FILE).write_text(mixing.model_dump_json(indent=2))

        logger.info(
            "Bundle written",
            path=str(self.root),
            keyframes=len(sequence.keyframes),
            semidense_fraction=metadata.semidense_fraction,
        )
        return metadata

    def write_labels(self, keyframe_id: int, labels: np.ndarray) -> None:
        labels = np.asarray(labels)
        if labels.min() < 0 or labels.max() > np.iinfo(np.uint16).max:
            raise BundleFormatError(self.root, "labels must fit in 16 unsigned bits")
        iio.imwrite(
            self.root / _frame_name("labels", keyframe_id, "png"),
            labels.astype(np.uint16),
        )


class ArtifactRepository:
    """Repository for the reconstruction output directory"""

    def __init__(self, root: Path):
        self.root = Path(root)
        self.ply = PLYHandler()

    def cloud_path(self, keyframe_id: int) -> Path:
        return self.root / _frame_name("cloud", keyframe_id, "ply")

    @property
    def global_path(self) -> Path:
        return self.root / GLOBAL_CLOUD_FILE

    @property
    def metrics_path(self) -> Path:
        return self.root / METRICS_FILE

    # ==================== WRITE METHODS ====================

    def write_keyframe_cloud(self, keyframe_id: int, cloud: PointCloud) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        path = self.cloud_path(keyframe_id)
        self.ply.write(path, cloud)
        return path

    def write_global_cloud(self, cloud: PointCloud) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        self.ply.write(self.global_path, cloud)
        return self.global_path

    def write_metrics(self, metrics: Dict[str, Any]) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        self.metrics_path.write_text(
            json.dumps(metrics, indent=2, sort_keys=True) + "\n"
        )
        return self.metrics_path

    # ==================== READ METHODS ====================

    def read_keyframe_cloud(self, keyframe_id: int) -> PointCloud:
        return self.ply.read(self.cloud_path(keyframe_id))

    def read_global_cloud(self) -> PointCloud:
        return self.ply.read(self.global_path)

    def read_metrics(self) -> Dict[str, Any]:
        return json.loads(self.metrics_path.read_text())
