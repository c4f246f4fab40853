"""Procedural colored point clouds (sphere, box, torus).

These stand in for the static assets a text-to-3D stage would produce, so
the whole pipeline runs without external files.
"""

from __future__ import annotations

import numpy as np

SHAPES = ("sphere", "box", "torus")


def sphere(n: int, radius: float = 0.5, rng=None, color=None) -> tuple[np.ndarray, np.ndarray]:
    rng = rng if rng is not None else np.random.default_rng(0)
    d = rng.normal(size=(n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, n) ** (1.0 / 3.0)
    pts = d * r[:, None]
    return pts, _colors(pts, radius, color)


def box(n: int, size=(1.0, 1.0, 1.0), rng=None, color=None) -> tuple[np.ndarray, np.ndarray]:
    rng = rng if rng is not None else np.random.default_rng(0)
    half = 0.5 * np.asarray(size, dtype=np.float64)
    pts = rng.uniform(-1.0, 1.0, (n, 3)) * half
    return pts, _colors(pts, float(half.max()), color)


def torus(n: int, major: float = 0.4, minor: float = 0.12, rng=None, color=None) -> tuple[np.ndarray, np.ndarray]:
    rng = rng if rng is not None else np.random.default_rng(0)
    u = rng.uniform(0, 2 * np.pi, n)
    v = rng.uniform(0, 2 * np.pi, n)
    r = minor * np.sqrt(rng.uniform(0, 1, n))
    pts = np.stack([(major + r * np.cos(v)) * np.cos(u), (major + r * np.cos(v)) * np.sin(u), r * np.sin(v)], axis=1)
    return pts, _colors(pts, major + minor, color)


def _colors(pts: np.ndarray, extent: float, color) -> np.ndarray:
    if color is not None:
        base = np.broadcast_to(np.asarray(color, dtype=np.float64), pts.shape)
        shade = 0.85 + 0.15 * (pts[:, 2:3] / max(extent, 1e-9))
        return np.clip(base * shade, 0.0, 1.0)
    return np.clip(0.5 + 0.5 * pts / max(extent, 1e-9), 0.0, 1.0)


def generate(shape: str, n: int, seed: int = 0, **params) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    if shape == "sphere":
        return sphere(n, rng=rng, **params)
    if shape == "box":
        return box(n, rng=rng, **params)
    if shape == "torus":
        return torus(n, rng=rng, **params)
    raise ValueError(f"unknown procedural shape {shape!r}; expected one of {SHAPES}")
