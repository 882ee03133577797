"""
PFM Handler

Portable float maps: "Pf" (one channel) or "PF" (three channels), a
"width height" line, a scale whose sign gives the byte order (negative:
little-endian), then float32 rows stored bottom to top. NaN survives the
round trip.
"""

from pathlib import Path

import numpy as np

from msfusion.domains.bundle_io.exceptions import BundleFormatError


def write_pfm(path: Path, values: np.ndarray) -> None:
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 2:
        header = "Pf"
    elif values.ndim == 3 and values.shape[2] == 3:
        header = "PF"
    else:
        raise BundleFormatError(
            path, f"cannot store an array of shape {values.shape} as PFM"
        )

    height, width = values.shape[:2]
    data = np.flipud(values).astype("<f4")
    with open(path, "wb") as handle:
        handle.write(f"{header}\n{width} {height}\n-1.0\n".encode("ascii"))
        handle.write(data.tobytes())


def read_pfm(path: Path) -> np.ndarray:
    """(H, W) or (H, W, 3) float64 array."""
    with open(path, "rb") as handle:
        header = handle.readline().strip()
        if header == b"PF":
            channels = 3
        elif header == b"Pf":
            channels = 1
        else:
            raise BundleFormatError(path, "missing PFM header")
        try:
            width, height = (int(v) for v in handle.readline().split())
            scale = float(handle.readline().strip())
        except ValueError:
            raise BundleFormatError(path, "malformed PFM dimensions or scale")
        dtype = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(handle.read(), dtype=dtype)

    expected = width * height * channels
    if data.size != expected:
        raise BundleFormatError(path, f"expected {expected} floats, found {data.size}")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return np.flipud(data.reshape(shape)).astype(np.float64)
