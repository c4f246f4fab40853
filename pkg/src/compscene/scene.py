"""Scene data model: Gaussians, objects, scenes and cameras."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import cKDTree

from . import plyio
from .deformation import DeformationNet
from .errors import ContractError, PointCountError

DEFAULT_K = 60
DEFAULT_OPACITY = 0.9


def quaternion_to_matrix(q) -> np.ndarray:
    """Rotation matrix for a unit quaternion ``(w, x, y, z)``; batched over leading axes."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    r = np.empty(q.shape[:-1] + (3, 3))
    r[..., 0, 0] = 1 - 2 * (y * y + z * z)
    r[..., 0, 1] = 2 * (x * y - z * w)
    r[..., 0, 2] = 2 * (x * z + y * w)
    r[..., 1, 0] = 2 * (x * y + z * w)
    r[..., 1, 1] = 1 - 2 * (x * x + z * z)
    r[..., 1, 2] = 2 * (y * z - x * w)
    r[..., 2, 0] = 2 * (x * z - y * w)
    r[..., 2, 1] = 2 * (y * z + x * w)
    r[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return r


@dataclass(frozen=True)
class Gaussian3D:
    center: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))
    opacity: float = 1.0
    color: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        center = np.asarray(self.center, dtype=np.float64).reshape(3)
        scale = np.asarray(self.scale, dtype=np.float64).reshape(3)
        rotation = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not np.all(scale > 0):
            raise ContractError(f"scale components must be positive, got {scale}")
        if abs(np.linalg.norm(rotation) - 1.0) > 1e-6:
            raise ContractError(f"rotation quaternion must be unit norm, got |q|={np.linalg.norm(rotation)}")
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "scale", scale)
        object.__setattr__(self, "rotation", rotation)
        object.__setattr__(self, "opacity", float(np.clip(self.opacity, 0.0, 1.0)))
        object.__setattr__(self, "color", np.clip(np.asarray(self.color, dtype=np.float64).reshape(3), 0.0, 1.0))


def covariances(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Batched ``R S S^T R^T`` for (N, 3) scales and (N, 4) quaternions."""
    m = quaternion_to_matrix(rotations) * np.asarray(scales)[..., None, :]
    cov = m @ np.swapaxes(m, -1, -2)
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def covariance_of(g: Gaussian3D) -> np.ndarray:
    return covariances(g.scale[None], g.rotation[None])[0]


def query_gaussian(g: Gaussian3D, x) -> float:
    """Unnormalized density ``exp(-0.5 (x-mu)^T Sigma^-1 (x-mu))``."""
    d = np.asarray(x, dtype=np.float64) - g.center
    # Sigma^-1 = R S^-2 R^T, so the Mahalanobis term is |S^-1 R^T d|^2
    local = quaternion_to_matrix(g.rotation).T @ d / g.scale
    return float(np.exp(-0.5 * (local @ local)))


# ---------------------------------------------------------------------------
# neighbor search


def build_knn(points: np.ndarray, k: int = DEFAULT_K) -> np.ndarray:
    """k nearest neighbors of every point (self excluded), ties by lower index.

    ``k`` is clamped to ``len(points) - 1``.
    """
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(k, n - 1)
    if k <= 0:
        return np.zeros((n, 0), dtype=np.int64)
    extra = min(n, k + 8)
    _, cand = cKDTree(points).query(points, k=extra)
    cand = np.asarray(cand, dtype=np.int64).reshape(n, extra)
    d2 = ((points[cand] - points[:, None, :]) ** 2).sum(axis=-1)
    d2[cand == np.arange(n)[:, None]] = np.inf
    order = np.lexsort((cand, d2), axis=-1)
    cand = np.take_along_axis(cand, order, axis=-1)
    d2 = np.take_along_axis(d2, order, axis=-1)
    out = cand[:, :k].copy()
    if extra < n:
        # a tie at the k-th distance may continue past the queried candidates
        finite = np.where(np.isfinite(d2), d2, -np.inf).max(axis=1)
        for i in np.nonzero(d2[:, k - 1] >= finite * (1 - 1e-12))[0]:
            row = np.delete(np.arange(n), i)
            dist = ((points[row] - points[i]) ** 2).sum(axis=1)
            out[i] = row[np.lexsort((row, dist))[:k]]
    return out


def initial_scales(points: np.ndarray, neighbors: int = 3, factor: float = 0.5) -> np.ndarray:
    """Isotropic scales: ``factor`` times the mean distance to the nearest ``neighbors``."""
    points = np.asarray(points, dtype=np.float64)
    n = len(points)
    k = min(neighbors, n - 1)
    if k <= 0:
        return np.full((n, 3), 1e-2)
    dist, _ = cKDTree(points).query(points, k=k + 1)
    mean = np.asarray(dist)[:, 1:].mean(axis=1)
    mean = np.maximum(mean, 1e-6)
    return np.repeat((factor * mean)[:, None], 3, axis=1)


# ---------------------------------------------------------------------------
# objects


@dataclass
class GaussianObject:
    """One entity: a Gaussian cloud plus its deformation field.

    Attributes are stored as parallel arrays; :attr:`gaussians` materializes
    per-splat :class:`Gaussian3D` views when needed.
    """

    centers: np.ndarray
    scales: np.ndarray
    rotations: np.ndarray
    opacities: np.ndarray
    colors: np.ndarray
    deformation: DeformationNet
    knn_cache: np.ndarray
    canonical_heading: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0]))
    object_scale: float = 1.0
    entity_prompt: str = ""
    name: str = ""

    def __post_init__(self):
        self.centers = np.asarray(self.centers, dtype=np.float64)
        n = len(self.centers)
        if self.centers.shape != (n, 3):
            raise ContractError("centers must be (N, 3)")
        self.scales = np.asarray(self.scales, dtype=np.float64).reshape(n, 3)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.opacities = np.clip(np.asarray(self.opacities, dtype=np.float64).reshape(n), 0.0, 1.0)
        self.colors = np.clip(np.asarray(self.colors, dtype=np.float64).reshape(n, 3), 0.0, 1.0)
        self.knn_cache = np.asarray(self.knn_cache, dtype=np.int64)
        if not np.all(self.scales > 0):
            raise ContractError("scale components must be positive")
        if np.any(np.abs(np.linalg.norm(self.rotations, axis=1) - 1.0) > 1e-6):
            raise ContractError("rotation quaternions must be unit norm")
        if self.knn_cache.ndim != 2 or self.knn_cache.shape[0] != n:
            raise ContractError("knn_cache must hold one row per Gaussian")
        if self.knn_cache.size and np.any(self.knn_cache == np.arange(n)[:, None]):
            raise ContractError("knn_cache rows must not reference their own Gaussian")
        heading = np.asarray(self.canonical_heading, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(heading) - 1.0) > 1e-9:
            raise ContractError("canonical_heading must be unit norm")
        self.canonical_heading = heading
        if not self.object_scale > 0:
            raise ContractError("object_scale must be positive")
        self.object_scale = float(self.object_scale)

    def __len__(self) -> int:
        return len(self.centers)

    @property
    def centroid(self) -> np.ndarray:
        return self.centers.mean(axis=0)

    @property
    def k(self) -> int:
        return self.knn_cache.shape[1]

    def gaussian(self, i: int) -> Gaussian3D:
        return Gaussian3D(self.centers[i], self.scales[i], self.rotations[i], self.opacities[i], self.colors[i])

    @property
    def gaussians(self) -> list[Gaussian3D]:
        return [self.gaussian(i) for i in range(len(self))]

    def copy(self) -> "GaussianObject":
        return GaussianObject(
            self.centers.copy(),
            self.scales.copy(),
            self.rotations.copy(),
            self.opacities.copy(),
            self.colors.copy(),
            self.deformation.copy(),
            self.knn_cache.copy(),
            self.canonical_heading.copy(),
            self.object_scale,
            self.entity_prompt,
            self.name,
        )


def make_object(
    positions,
    colors,
    *,
    k: int = DEFAULT_K,
    opacity: float = DEFAULT_OPACITY,
    object_scale: float = 1.0,
    entity_prompt: str = "",
    name: str = "",
    hidden: Sequence[int] = (64, 64, 64),
    seed: int = 0,
) -> GaussianObject:
    positions = np.asarray(positions, dtype=np.float64)
    n = len(positions)
    if n == 0:
        raise PointCountError("an object needs at least one point")
    net = DeformationNet.create(
        hidden=hidden, bbox=(positions.min(axis=0), positions.max(axis=0)), seed=seed
    )
    return GaussianObject(
        centers=positions,
        scales=initial_scales(positions),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacities=np.full(n, opacity),
        colors=colors,
        deformation=net,
        knn_cache=build_knn(positions, k),
        object_scale=object_scale,
        entity_prompt=entity_prompt,
        name=name,
    )


def load_object_from_pointcloud(path, point_count: int | None = None, **kwargs) -> GaussianObject:
    """Initialize one Gaussian per PLY point.

    Clouds larger than ``point_count`` are subsampled at evenly spaced indices.
    """
    cloud = plyio.read_ply(path)
    n = len(cloud.positions)
    if point_count is not None:
        if n < point_count:
            raise PointCountError(f"{path}: {n} points, {point_count} requested")
        if n > point_count:
            idx = np.linspace(0, n - 1, point_count).round().astype(np.int64)
            cloud.positions, cloud.colors = cloud.positions[idx], cloud.colors[idx]
    return make_object(cloud.positions, cloud.colors, **kwargs)


# ---------------------------------------------------------------------------
# scenes and cameras


def uniform_time_grid(frames: int) -> np.ndarray:
    if frames < 2:
        raise ContractError("a time grid needs at least 2 frames")
    return np.linspace(0.0, 1.0, frames)


@dataclass
class Scene:
    objects: list[GaussianObject]
    trajectories: list  # trajectory.Trajectory, one per object
    scene_prompt: str = ""
    time_grid: np.ndarray = field(default_factory=lambda: uniform_time_grid(16))

    def __post_init__(self):
        if len(self.trajectories) != len(self.objects):
            raise ContractError("need exactly one trajectory per object")
        grid = np.asarray(self.time_grid, dtype=np.float64)
        if grid.ndim != 1 or len(grid) < 2 or grid[0] != 0.0 or grid[-1] != 1.0 or np.any(np.diff(grid) <= 0):
            raise ContractError("time_grid must increase strictly from 0 to 1")
        self.time_grid = grid


@dataclass(frozen=True)
class Camera:
    """Pinhole camera. Image x grows right, y grows down; z is the view axis."""

    position: np.ndarray
    look_at: np.ndarray
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    vertical_fov: float = np.deg2rad(40.0)
    image_width: int = 576
    image_height: int = 320
    near: float = 0.01
    far: float = 100.0

    def __post_init__(self):
        for name in ("position", "look_at", "up"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64).reshape(3))
        if not (self.near > 0 and self.far > self.near):
            raise ContractError("camera needs 0 < near < far")
        if not 0 < self.vertical_fov < np.pi:
            raise ContractError("vertical_fov must lie in (0, pi)")
        if self.image_width <= 0 or self.image_height <= 0:
            raise ContractError("image size must be positive")
        fwd = self.look_at - self.position
        if np.linalg.norm(fwd) == 0:
            raise ContractError("look_at coincides with position")
        if np.linalg.norm(np.cross(fwd, self.up)) < 1e-9 * np.linalg.norm(fwd) * np.linalg.norm(self.up):
            raise ContractError("view direction is parallel to up")

    @property
    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are (right, down, forward)."""
        fwd = self.look_at - self.position
        fwd = fwd / np.linalg.norm(fwd)
        right = np.cross(fwd, self.up)
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return np.stack([right, down, fwd])

    @property
    def focal(self) -> float:
        return 0.5 * self.image_height / np.tan(0.5 * self.vertical_fov)

    @property
    def principal_point(self) -> tuple[float, float]:
        return 0.5 * self.image_width, 0.5 * self.image_height

    def with_resolution(self, height: int, width: int) -> "Camera":
        return Camera(self.position, self.look_at, self.up, self.vertical_fov, width, height, self.near, self.far)


def orbit_camera(
    azimuth_deg: float,
    elevation_deg: float = 0.0,
    radius: float = 6.0,
    *,
    look_at=(0.0, 0.0, 0.0),
    height: int = 320,
    width: int = 576,
    vertical_fov: float = np.deg2rad(40.0),
    near: float = 0.01,
    far: float = 100.0,
) -> Camera:
    """Camera on a sphere around ``look_at``; azimuth 0 sits on the +x axis, z is up."""
    az, el = np.deg2rad(azimuth_deg), np.deg2rad(elevation_deg)
    target = np.asarray(look_at, dtype=np.float64)
    offset = radius * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    return Camera(target + offset, target, np.array([0.0, 0.0, 1.0]), vertical_fov, width, height, near, far)
