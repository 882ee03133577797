"""
PLY Handler

ASCII PLY point clouds with per-vertex x y z nx ny nz red green blue.
Points without a normal are written with a zero normal; the header
comments record how many.
"""

import io
from pathlib import Path
from typing import List, Tuple

import numpy as np
from plyfile import PlyData, PlyElement, PlyParseError

from msfusion.domains.bundle_io.exceptions import BundleFormatError
from msfusion.domains.geometry.schemas import PointCloud

VERTEX_DTYPE = np.dtype(
    [
        ("x", "f8"),
        ("y", "f8"),
        ("z", "f8"),
        ("nx", "f8"),
        ("ny", "f8"),
        ("nz", "f8"),
        ("red", "u1"),
        ("green", "u1"),
        ("blue", "u1"),
    ]
)


class PLYHandler:
    """Generates and parses ASCII PLY point clouds"""

    def to_ply_data(self, cloud: PointCloud) -> PlyData:
        count = len(cloud)
        colors = cloud.colors if cloud.colors is not None else np.zeros((count, 3))
        rgb = np.rint(np.clip(colors, 0.0, 1.0) * 255).astype(np.uint8)

        vertices = np.empty(count, dtype=VERTEX_DTYPE)
        for axis, name in enumerate("xyz"):
            vertices[name] = cloud.positions[:, axis]
            vertices["n" + name] = cloud.normals[:, axis]
        for channel, name in enumerate(("red", "green", "blue")):
            vertices[name] = rgb[:, channel]

        zeroed = count - cloud.normal_count
        comments = [
            "generated by msfusion",
            f"normals zeroed where absent: {zeroed} of {count} points",
        ]
        return PlyData(
            [PlyElement.describe(vertices, "vertex")], text=True, comments=comments
        )

    def generate_ply(self, cloud: PointCloud) -> str:
        output = io.BytesIO()
        self.to_ply_data(cloud).write(output)
        return output.getvalue().decode("ascii")

    def from_ply_data(self, data: PlyData, path: Path = Path("<memory>")) -> PointCloud:
        try:
            vertex = data["vertex"]
        except KeyError:
            raise BundleFormatError(path, "no vertex element")
        names = vertex.data.dtype.names or ()
        for required in ("x", "y", "z"):
            if required not in names:
                raise BundleFormatError(path, f"missing vertex property {required}")

        def columns(*fields: str) -> np.ndarray:
            return np.stack(
                [np.asarray(vertex[f], dtype=np.float64) for f in fields], axis=-1
            )

        positions = columns("x", "y", "z").reshape(-1, 3)
        normals = None
        has_normal = None
        if all(n in names for n in ("nx", "ny", "nz")):
            raw = columns("nx", "ny", "nz").reshape(-1, 3)
            norms = np.linalg.norm(raw, axis=-1)
            has_normal = norms > 0
            unit = raw / np.where(has_normal, norms, 1.0)[:, None]
            normals = np.where(has_normal[:, None], unit, 0.0)
        colors = None
        if all(n in names for n in ("red", "green", "blue")):
            colors = columns("red", "green", "blue").reshape(-1, 3) / 255.0

        return PointCloud(
            positions=positions, normals=normals, has_normal=has_normal, colors=colors
        )

    def parse_ply(
        self, content: str, path: Path = Path("<memory>")
    ) -> Tuple[PointCloud, List[str]]:
        """
        Parse ASCII PLY content.

        Returns:
            (cloud, header comments). Zero normals come back as missing;
            colours are present only when the file has red/green/blue.
        """
        try:
            data = PlyData.read(io.BytesIO(content.encode("ascii")))
        except (PlyParseError, ValueError, UnicodeEncodeError) as e:
            raise BundleFormatError(path, f"unreadable PLY: {e}")
        if not data.text:
            raise BundleFormatError(path, "unsupported PLY format, expected ascii")
        return self.from_ply_data(data, path), list(data.comments)

    def write(self, path: Path, cloud: PointCloud) -> None:
        Path(path).write_text(self.generate_ply(cloud), encoding="ascii")

    def read(self, path: Path) -> PointCloud:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"PLY file {path} does not exist")
        cloud, _ = self.parse_ply(path.read_text(encoding="ascii"), path)
        return cloud
