"""Scene composition: place deformed objects along trajectories and render.

Scene time ``s`` in ``[0, 1]`` maps linearly onto each trajectory's domain
``[0, t_max]``, so a truncated trajectory still spans the whole clip.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .deformation import deform
from .errors import ContractError, DomainError
from .orientation import Placement, placement
from .raster import (
    Projection,
    RasterContext,
    RenderOutput,
    SplatBatch,
    project_arrays,
    project_backward,
    rasterize,
    rasterize_backward,
)
from .scene import Camera, Scene

JOINT = "joint"


@dataclass(frozen=True)
class RenderMode:
    kind: str = JOINT
    index: int | None = None

    @classmethod
    def single(cls, index: int) -> "RenderMode":
        return cls("single", index)

    def active(self, n_objects: int) -> list[int]:
        if self.kind == JOINT:
            return list(range(n_objects))
        if self.index is None or not 0 <= self.index < n_objects:
            raise IndexError(f"object index {self.index} out of range for {n_objects} objects")
        return [self.index]


def as_mode(mode) -> RenderMode:
    if isinstance(mode, RenderMode):
        return mode
    if mode is None or mode == JOINT:
        return RenderMode()
    if isinstance(mode, (int, np.integer)):
        return RenderMode.single(int(mode))
    if isinstance(mode, tuple) and mode[0] == "single":
        return RenderMode.single(int(mode[1]))
    raise ContractError(f"unknown render mode {mode!r}")


def object_pose(scene: Scene, o: int, s: float, mode: RenderMode) -> Placement:
    """Pose of object ``o`` at scene time ``s``.

    Object-centric renders drop the trajectory: no rotation, no translation.
    """
    obj = scene.objects[o]
    if mode.kind != JOINT:
        return Placement(np.eye(3), np.zeros(3), obj.object_scale, obj.centroid)
    traj = scene.trajectories[o]
    grid = scene.time_grid * traj.t_max
    return placement(obj, traj, min(s * traj.t_max, traj.t_max), grid)


def object_deltas(scene: Scene, o: int, s: float) -> np.ndarray:
    obj = scene.objects[o]
    return deform(obj.deformation, obj.centers, s)


@dataclass
class FrameContext:
    """Bookkeeping to push image gradients back to per-object quantities."""

    camera: Camera
    objects: list[int]
    poses: list[Placement]
    projections: list[Projection]
    segments: list[tuple[int, int]]
    raster: RasterContext


def render_frame(
    scene: Scene,
    cam: Camera,
    s: float,
    mode=JOINT,
    deltas: dict[int, np.ndarray] | None = None,
    background=None,
) -> tuple[RenderOutput, FrameContext]:
    if not 0.0 <= s <= 1.0:
        raise DomainError(f"timestep {s} outside [0, 1]")
    mode = as_mode(mode)
    active = mode.active(len(scene.objects))
    offsets = np.cumsum([0] + [len(o) for o in scene.objects])
    poses, projs, batches, segments = [], [], [], []
    start = 0
    for o in active:
        obj = scene.objects[o]
        d = deltas[o] if deltas is not None and o in deltas else object_deltas(scene, o, s)
        pose = object_pose(scene, o, s, mode)
        pts = pose.apply(obj.centers + d)
        proj = project_arrays(
            pts, obj.scales * obj.object_scale, obj.rotations, obj.opacities, obj.colors, cam,
            keys=offsets[o] + np.arange(len(obj)), cov_rotation=pose.rotation,
        )
        poses.append(pose)
        projs.append(proj)
        batches.append(proj.batch)
        segments.append((start, start + len(proj.batch)))
        start += len(proj.batch)
    batch = SplatBatch.concat(batches)
    out, ctx = rasterize(batch, cam.image_height, cam.image_width, background)
    return out, FrameContext(cam, active, poses, projs, segments, ctx)


def render_scene(scene: Scene, cam: Camera, t: float, mode=JOINT, background=None) -> RenderOutput:
    """Render the scene at time ``t``: all objects along their trajectories, or one at the origin."""
    out, _ = render_frame(scene, cam, t, mode, None, background)
    return out


@dataclass
class ObjectGrads:
    deltas: np.ndarray  # (N, 3) d/d displacement
    centers: np.ndarray  # (N, 3) d/d static centers (includes the centroid pivot)
    colors: np.ndarray  # (N, 3)
    opacities: np.ndarray  # (N,)


def frame_backward(scene: Scene, fctx: FrameContext, grad_image: np.ndarray) -> dict[int, ObjectGrads]:
    sg = rasterize_backward(fctx.raster, grad_image)
    result = {}
    for k, o in enumerate(fctx.objects):
        obj = scene.objects[o]
        n = len(obj)
        a, b = fctx.segments[k]
        proj = fctx.projections[k]
        vis = proj.visible
        g_world = np.zeros((n, 3))
        g_world[vis] = project_backward(proj, fctx.camera, sg.means[a:b], sg.covs[a:b])
        jac = fctx.poses[k].jacobian
        g_delta = g_world @ jac
        pivot = g_world.sum(axis=0) @ (np.eye(3) - jac) / n
        colors = np.zeros((n, 3))
        colors[vis] = sg.colors[a:b]
        opac = np.zeros(n)
        opac[vis] = sg.opacities[a:b]
        result[o] = ObjectGrads(g_delta, g_delta + pivot, colors, opac)
    return result
