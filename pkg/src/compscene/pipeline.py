"""Batch pipeline: decompose, build objects, trajectory, distillation, render.

Every run writes into one timestamped directory::

    run-<UTC time>-s<seed>/
        manifest.json  config.json  brief.json  trajectory.json
        loss.csv  transcript.jsonl (online only)
        checkpoint/scene.json  checkpoint/object_<i>.{ply,dfn,knn.npy}
        frames/az<deg>_f<idx>.png
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import platform
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import deformation, plyio, shapes
from .compose import RenderMode, render_frame
from .config import PipelineConfig
from .denoisers import make_denoiser
from .director import (
    SceneBrief,
    decompose,
    propose_trajectory,
    refine_with_report,
)
from .distillation import DenoiserSet, rng_streams, train, write_history
from .errors import CheckpointError, DomainError, InputFormatError
from .llm import HTTPChatClient, ReplayClient, TranscriptClient
from .raster import to_png
from .scene import GaussianObject, Scene, load_object_from_pointcloud, make_object, orbit_camera, uniform_time_grid
from .trajectory import Trajectory

logger = logging.getLogger(__name__)

REFERENCE_FPS = 70.0
REFERENCE_RESOLUTION = (320, 576)
CHECKPOINT_VERSION = 1


class StageError(RuntimeError):
    def __init__(self, stage: str, cause: BaseException, run_dir: Path | None = None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.run_dir = run_dir


@dataclass
class RunResult:
    run_dir: Path
    scene: Scene
    brief: SceneBrief
    frames: list[Path] = field(default_factory=list)
    history: list[dict] = field(default_factory=list)


# ---------------------------------------------------------------------------
# helpers


def make_run_dir(output_dir, seed: int) -> Path:
    stamp = _dt.datetime.now(_dt.timezone.utc).strftime("%Y%m%dT%H%M%S")
    base = Path(output_dir) / f"run-{stamp}-s{seed}"
    path, n = base, 1
    while path.exists():
        path = base.with_name(f"{base.name}-{n}")
        n += 1
    path.mkdir(parents=True)
    return path


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def make_client(config: PipelineConfig, run_dir: Path | None):
    """``None`` when offline, so no network code is ever reached."""
    if config.offline:
        return None
    inner = ReplayClient.from_file(config.replay_transcript) if config.replay_transcript else HTTPChatClient.from_env()
    return TranscriptClient(inner, run_dir / "transcript.jsonl") if run_dir is not None else inner


def make_denoisers(config: PipelineConfig) -> DenoiserSet:
    h, w = config.resolution
    opts = dict(config.denoiser_options)
    if config.denoiser == "target_image" and "path" in opts:
        opts.setdefault("height", h)
        opts.setdefault("width", w)
    return DenoiserSet(*(make_denoiser(config.denoiser, m, **opts) for m in ("image", "multiview", "video")))


def build_objects(brief: SceneBrief, config: PipelineConfig) -> list[GaussianObject]:
    """One object per brief entity, mover first; assets come from config or default to spheres."""
    init = rng_streams(config.seed)["init"]
    ordered = sorted(brief.entities, key=lambda e: e.name == brief.anchor_entity)
    objects = []
    for i, ent in enumerate(ordered):
        asset = config.entities.get(ent.name)
        seed = int(init.integers(2**31))
        kw = dict(k=min(config.knn, config.points_per_object - 1), object_scale=ent.relative_scale,
                  entity_prompt=ent.entity_prompt, name=ent.name, seed=seed)
        if asset is not None and asset.ply is not None:
            objects.append(load_object_from_pointcloud(asset.ply, config.points_per_object, **kw))
            continue
        shape = asset.shape if asset is not None and asset.shape else "sphere"
        params = {"color": asset.color} if asset is not None and asset.color is not None else {}
        pts, cols = shapes.generate(shape, config.points_per_object, seed=seed, **params)
        objects.append(make_object(pts, cols, **kw))
    return objects


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(scene: Scene, path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    objects = []
    for i, obj in enumerate(scene.objects):
        stem = f"object_{i}"
        plyio.write_gaussians(path / f"{stem}.ply", obj.centers, obj.colors, obj.opacities, obj.scales, obj.rotations)
        deformation.save(obj.deformation, path / f"{stem}.dfn")
        np.save(path / f"{stem}.knn.npy", obj.knn_cache)
        objects.append({"name": obj.name, "entity_prompt": obj.entity_prompt, "object_scale": obj.object_scale,
                        "canonical_heading": obj.canonical_heading.tolist(), "stem": stem})
    _write_json(path / "scene.json", {
        "version": CHECKPOINT_VERSION,
        "scene_prompt": scene.scene_prompt,
        "time_grid": scene.time_grid.tolist(),
        "objects": objects,
        "trajectories": [t.to_dict() for t in scene.trajectories],
    })
    return path


def load_checkpoint(path) -> Scene:
    path = Path(path)
    try:
        meta = json.loads((path / "scene.json").read_text(encoding="utf-8"))
        objects = []
        for rec in meta["objects"]:
            stem = path / rec["stem"]
            cloud = plyio.read_ply(stem.with_suffix(".ply"))
            ex = cloud.extra
            objects.append(GaussianObject(
                centers=cloud.positions,
                scales=np.stack([ex[f"scale_{i}"] for i in range(3)], axis=1),
                rotations=np.stack([ex[f"rot_{i}"] for i in range(4)], axis=1),
                opacities=ex["opacity"],
                colors=cloud.colors,
                deformation=deformation.load(stem.with_suffix(".dfn")),
                knn_cache=np.load(stem.with_suffix(".knn.npy")),
                canonical_heading=rec["canonical_heading"],
                object_scale=rec["object_scale"],
                entity_prompt=rec["entity_prompt"],
                name=rec["name"],
            ))
        trajs = [Trajectory.from_dict(t) for t in meta["trajectories"]]
        return Scene(objects, trajs, meta["scene_prompt"], np.asarray(meta["time_grid"]))
    except CheckpointError:
        raise
    except (OSError, KeyError, ValueError, TypeError, InputFormatError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc


# ---------------------------------------------------------------------------
# rendering


def _camera(azimuth: float, height: int, width: int):
    return orbit_camera(azimuth, 0.0, 6.0, height=height, width=width)


def render_turntable(checkpoint, views, timesteps=None, *, resolution=REFERENCE_RESOLUTION, out_dir=None,
                     background=(1.0, 1.0, 1.0)) -> dict[tuple[float, float], np.ndarray]:
    """Render every ``(azimuth, timestep)`` pair; write PNGs when ``out_dir`` is given."""
    scene = checkpoint if isinstance(checkpoint, Scene) else load_checkpoint(checkpoint)
    times = list(scene.time_grid if timesteps is None else timesteps)
    for t in times:
        if not 0.0 <= float(t) <= 1.0:
            raise DomainError(f"timestep {t} outside [0, 1]")
    h, w = resolution
    images = {}
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
    for az in views:
        cam = _camera(float(az), h, w)
        for f, t in enumerate(times):
            out, _ = render_frame(scene, cam, float(t), RenderMode(), None, background)
            images[(float(az), float(t))] = out.image
            if out_dir is not None:
                to_png(out, Path(out_dir) / f"az{float(az):05.1f}_f{f:02d}.png")
    return images


def benchmark_render(checkpoint, resolution=(64, 64), n_frames: int = 10, warmup: int = 1) -> dict:
    """Wall-clock frames per second over warm renders; informational only."""
    scene = checkpoint if isinstance(checkpoint, Scene) else load_checkpoint(checkpoint)
    h, w = resolution
    report = {
        "resolution": [h, w],
        "frames": n_frames,
        "gaussians": int(sum(len(o) for o in scene.objects)),
        "fps": None,
        "seconds": None,
        "reference_fps": REFERENCE_FPS,
        "reference_resolution": list(REFERENCE_RESOLUTION),
        "machine": platform.machine(),
    }
    if n_frames <= 0:
        return report
    cam = _camera(0.0, h, w)
    times = np.linspace(0.0, 1.0, n_frames)
    for _ in range(warmup):
        render_frame(scene, cam, 0.0)
    start = time.perf_counter()
    for t in times:
        render_frame(scene, cam, float(t))
    elapsed = time.perf_counter() - start
    report["seconds"] = elapsed
    report["fps"] = n_frames / elapsed if elapsed > 0 else float("inf")
    return report


# ---------------------------------------------------------------------------
# stages


class _Stages:
    """Runs named stages, recording status in the manifest as it goes."""

    def __init__(self, run_dir: Path, config: PipelineConfig):
        self.run_dir = run_dir
        self.manifest = {
            "created_utc": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
            "seed": config.seed,
            "offline": config.offline,
            "python": platform.python_version(),
            "stages": [],
            "files": {},
        }
        self.flush()

    def run(self, name: str, fn, *args, **kwargs):
        logger.info("stage %s", name)
        start = time.perf_counter()
        try:
            result = fn(*args, **kwargs)
        except Exception as exc:
            self.manifest["stages"].append({"name": name, "status": "failed", "error": str(exc)})
            self.flush()
            raise StageError(name, exc, self.run_dir) from exc
        self.manifest["stages"].append({"name": name, "status": "ok",
                                        "seconds": round(time.perf_counter() - start, 3)})
        self.flush()
        return result

    def flush(self) -> None:
        files = sorted(p for p in self.run_dir.rglob("*") if p.is_file() and p.name != "manifest.json")
        self.manifest["files"] = {str(p.relative_to(self.run_dir)): _sha256(p) for p in files}
        _write_json(self.run_dir / "manifest.json", self.manifest)


def _setup_scene(config: PipelineConfig, client, run_dir: Path):
    brief = decompose(config.scene_prompt, client)
    _write_json(run_dir / "brief.json", brief.to_dict())
    objects = build_objects(brief, config)
    trajs = [Trajectory.stationary() for _ in objects]
    scene = Scene(objects, trajs, config.scene_prompt, uniform_time_grid(config.frames))
    return brief, scene


def _plan_trajectory(brief: SceneBrief, scene: Scene, client, run_dir: Path) -> Scene:
    record = {"mover": None, "trajectory": None}
    if brief.mover is not None:
        proposal = propose_trajectory(brief, client)
        ref = refine_with_report(proposal, scene, client, brief=brief, mover=0)
        scene.trajectories[0] = ref.trajectory
        record = {"mover": brief.mover.name, "proposal": proposal.to_dict(),
                  "accepted": ref.proposal.to_dict(), "collision": ref.report.to_dict(),
                  "candidates": len(ref.candidates), "trajectory": ref.trajectory.to_dict()}
    record["anchor"] = {"name": brief.anchor_entity, "trajectory": scene.trajectories[-1].to_dict()}
    _write_json(run_dir / "trajectory.json", record)
    return scene


def _render_frames(scene: Scene, config: PipelineConfig, run_dir: Path) -> list[Path]:
    h, w = config.resolution
    frames_dir = run_dir / "frames"
    render_turntable(scene, config.render_azimuths, None, resolution=(h, w), out_dir=frames_dir,
                     background=config.sds.background)
    return sorted(frames_dir.glob("*.png"))


def plan_only(config: PipelineConfig, run_dir: Path | None = None) -> tuple[Path, Scene]:
    """Director and trajectory refinement only."""
    run_dir = Path(run_dir) if run_dir is not None else make_run_dir(config.output_dir, config.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "config.json", config.to_dict())
    stages = _Stages(run_dir, config)
    client = stages.run("client", make_client, config, run_dir)
    brief, scene = stages.run("decompose", _setup_scene, config, client, run_dir)
    scene = stages.run("trajectory", _plan_trajectory, brief, scene, client, run_dir)
    return run_dir, scene


def run_pipeline(config: PipelineConfig, run_dir: Path | None = None, progress=None) -> RunResult:
    run_dir = Path(run_dir) if run_dir is not None else make_run_dir(config.output_dir, config.seed)
    run_dir.mkdir(parents=True, exist_ok=True)
    _write_json(run_dir / "config.json", config.to_dict())
    stages = _Stages(run_dir, config)
    client = stages.run("client", make_client, config, run_dir)
    brief, scene = stages.run("decompose", _setup_scene, config, client, run_dir)
    denoisers = stages.run("denoisers", make_denoisers, config)
    static_cfg = replace(config.sds, iterations=0)
    scene, static_hist = stages.run("static", train, scene, static_cfg, denoisers, config.seed,
                                    config.regularizers, None, progress)
    scene = stages.run("trajectory", _plan_trajectory, brief, scene, client, run_dir)
    dynamic_cfg = replace(config.sds, static_iterations=0)
    scene, dyn_hist = stages.run("dynamic", train, scene, dynamic_cfg, denoisers, config.seed,
                                 config.regularizers, None, progress)
    history = static_hist + dyn_hist
    write_history(history, run_dir / "loss.csv")
    stages.run("checkpoint", save_checkpoint, scene, run_dir / "checkpoint")
    frames = stages.run("render", _render_frames, scene, config, run_dir)
    return RunResult(run_dir, scene, brief, frames, history)
