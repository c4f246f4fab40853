"""Heading alignment of objects along their trajectories."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ContractError

CANONICAL_HEADING = np.array([1.0, 0.0, 0.0])


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _antipodal_axis(a: np.ndarray) -> np.ndarray:
    ref = np.array([0.0, 0.0, 1.0])
    if abs(abs(a @ ref) - 1.0) < 1e-6:
        ref = np.array([0.0, 1.0, 0.0])
    axis = ref - (ref @ a) * a
    return axis / np.linalg.norm(axis)


def rotation_between(a, b) -> np.ndarray:
    """Rotation taking unit vector ``a`` onto unit vector ``b`` (Rodrigues).

    The axis is ``a x b`` normalized, evaluated as ``a x (b - a)`` (or
    ``a x (b + a)`` past 90 degrees) so nearly parallel and nearly
    antiparallel pairs keep full precision.  Exactly antipodal
    inputs rotate by pi about the component of +z orthogonal to ``a``
    (+y when ``a`` is along z).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    for v in (a, b):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ContractError("rotation_between expects unit vectors")
    c = float(a @ b)
    # a x b == a x (b -/+ a); the difference is exact when a and b nearly (anti)align
    d = b - a if c >= 0 else b + a
    v = np.cross(a, d)
    s = np.linalg.norm(v)
    one_minus_c = 0.5 * float(d @ d) if c >= 0 else 2.0 - 0.5 * float(d @ d)
    if s == 0.0:
        if c > 0:
            return np.eye(3)
        k = skew(_antipodal_axis(a))
        return np.eye(3) + 2.0 * (k @ k)
    k = skew(v / s)
    return np.eye(3) + s * k + one_minus_c * (k @ k)


def heading_at(traj, i: int, timesteps, canonical=CANONICAL_HEADING) -> np.ndarray:
    """Unit direction from sample ``i`` to sample ``i + 1``.

    The last sample reuses the previous segment; stationary segments fall
    back to the most recent moving one, then to ``canonical``.
    """
    timesteps = np.asarray(timesteps, dtype=np.float64)
    n = len(timesteps)
    if not 0 <= i < n:
        raise ContractError(f"sample index {i} outside 0..{n - 1}")
    for seg in range(min(i, n - 2), -1, -1):
        d = traj.position(timesteps[seg + 1]) - traj.position(timesteps[seg])
        norm = np.linalg.norm(d)
        scale = max(1.0, np.linalg.norm(traj.position(timesteps[seg])))
        if norm > 1e-12 * scale:
            return d / norm
    return np.asarray(canonical, dtype=np.float64)


@dataclass
class Placement:
    rotation: np.ndarray  # (3, 3)
    translation: np.ndarray  # (3,)
    scale: float
    centroid: np.ndarray  # (3,)

    @property
    def jacobian(self) -> np.ndarray:
        """Linear part mapping a displacement to a world-space offset."""
        return self.scale * self.rotation

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (points - self.centroid) @ self.jacobian.T + self.centroid + self.translation


@dataclass
class PlacementSequence:
    rotations: np.ndarray  # (T, 3, 3)
    translations: np.ndarray  # (T, 3)

    def __post_init__(self):
        r = self.rotations
        eye = np.eye(3)
        if np.abs(r @ np.swapaxes(r, 1, 2) - eye).max() > 1e-9 or np.abs(np.linalg.det(r) - 1).max() > 1e-9:
            raise ContractError("placement rotations must be proper orthonormal")


def placement(obj, traj, t: float, timesteps) -> Placement:
    """Pose of ``obj`` at trajectory time ``t``.

    The heading uses the segment of ``timesteps`` that contains ``t``.
    """
    timesteps = np.asarray(timesteps, dtype=np.float64)
    i = int(np.clip(np.searchsorted(timesteps, t, side="right") - 1, 0, len(timesteps) - 1))
    rot = rotation_between(obj.canonical_heading, heading_at(traj, i, timesteps, obj.canonical_heading))
    return Placement(rot, traj.position(t), obj.object_scale, obj.centroid)


def place_object(obj, traj, t: float, timesteps, deltas=None) -> np.ndarray:
    """World centers: scaled and rotated about the centroid, then moved along ``traj``."""
    pts = obj.centers if deltas is None else obj.centers + deltas
    return placement(obj, traj, t, timesteps).apply(pts)


def placement_sequence(obj, traj, timesteps) -> PlacementSequence:
    poses = [placement(obj, traj, t, timesteps) for t in timesteps]
    return PlacementSequence(np.stack([p.rotation for p in poses]), np.stack([p.translation for p in poses]))
