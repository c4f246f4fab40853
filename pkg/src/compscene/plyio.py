"""PLY import/export for point clouds and Gaussian clouds.

Import accepts any PLY (ASCII or binary little-endian) with a ``vertex``
element carrying ``x, y, z`` and ``red, green, blue``.  Export writes binary
little-endian; Gaussian checkpoints add double-precision attribute columns so
a reload reproduces the in-memory cloud bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from plyfile import PlyData, PlyElement

from .errors import InputFormatError


@dataclass
class PointCloud:
    positions: np.ndarray  # (N, 3) float64
    colors: np.ndarray  # (N, 3) float64 in [0, 1]
    extra: dict[str, np.ndarray]


def _color_scale(dtype: np.dtype) -> float:
    if np.issubdtype(dtype, np.integer):
        return float(np.iinfo(dtype).max)
    return 1.0


def read_ply(path) -> PointCloud:
    path = Path(path)
    if not path.exists():
        raise InputFormatError(f"no such PLY file: {path}")
    try:
        ply = PlyData.read(str(path))
        vertex = ply["vertex"].data
    except Exception as exc:  # plyfile raises a mix of types on bad input
        raise InputFormatError(f"cannot parse {path} as PLY: {exc}") from exc

    names = vertex.dtype.names or ()
    for required in ("x", "y", "z"):
        if required not in names:
            raise InputFormatError(f"{path}: vertex element lacks '{required}'")
    positions = np.stack([vertex[c] for c in ("x", "y", "z")], axis=1).astype(np.float64)

    if all(c in names for c in ("color_r", "color_g", "color_b")):
        colors = np.stack([vertex[c] for c in ("color_r", "color_g", "color_b")], axis=1).astype(np.float64)
    elif all(c in names for c in ("red", "green", "blue")):
        scale = _color_scale(vertex["red"].dtype)
        colors = np.stack([vertex[c] for c in ("red", "green", "blue")], axis=1).astype(np.float64) / scale
    else:
        raise InputFormatError(f"{path}: vertex element lacks red/green/blue")

    known = {"x", "y", "z", "red", "green", "blue", "color_r", "color_g", "color_b"}
    extra = {n: np.asarray(vertex[n], dtype=np.float64) for n in names if n not in known}
    if not np.all(np.isfinite(positions)):
        raise InputFormatError(f"{path}: non-finite vertex positions")
    return PointCloud(positions, np.clip(colors, 0.0, 1.0), extra)


def write_point_cloud(path, positions, colors, *, text: bool = False) -> None:
    """Write the interchange layout: float32 xyz, uint8 rgb."""
    positions = np.asarray(positions, dtype=np.float32)
    colors = np.clip(np.round(np.asarray(colors, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)
    data = np.empty(
        len(positions),
        dtype=[("x", "f4"), ("y", "f4"), ("z", "f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")],
    )
    for i, c in enumerate("xyz"):
        data[c] = positions[:, i]
    for i, c in enumerate(("red", "green", "blue")):
        data[c] = colors[:, i]
    PlyData([PlyElement.describe(data, "vertex")], text=text).write(str(path))


def write_gaussians(path, centers, colors, opacities, scales, rotations) -> None:
    """Write a lossless Gaussian cloud (doubles) that still opens as a point cloud."""
    n = len(centers)
    fields = [("x", "f8"), ("y", "f8"), ("z", "f8"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    fields += [("color_r", "f8"), ("color_g", "f8"), ("color_b", "f8"), ("opacity", "f8")]
    fields += [(f"scale_{i}", "f8") for i in range(3)] + [(f"rot_{i}", "f8") for i in range(4)]
    data = np.empty(n, dtype=fields)
    for i, c in enumerate("xyz"):
        data[c] = centers[:, i]
    rgb8 = np.clip(np.round(colors * 255.0), 0, 255).astype(np.uint8)
    for i, (c8, cf) in enumerate(zip(("red", "green", "blue"), ("color_r", "color_g", "color_b"))):
        data[c8] = rgb8[:, i]
        data[cf] = colors[:, i]
    data["opacity"] = opacities
    for i in range(3):
        data[f"scale_{i}"] = scales[:, i]
    for i in range(4):
        data[f"rot_{i}"] = rotations[:, i]
    PlyData([PlyElement.describe(data, "vertex")], text=False).write(str(path))
