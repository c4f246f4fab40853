"""Score-distillation training: SDS gradients, static and dynamic steps, train loop.

Noise levels are continuous ``t`` in ``[t_min, t_max]`` snapped to one of
1000 discrete levels with a linear schedule ``alpha_bar = 1 - level / 1000``.
Renders are noised as ``x_t = sqrt(alpha_bar) x + sqrt(1 - alpha_bar) eps``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .compose import RenderMode, frame_backward, object_pose, render_frame
from .denoisers import Denoiser, NoiseProbe, OracleDenoiser
from .errors import ContractError, DivergenceError, NumericError
from .regularizers import RegTerms, RegWeights, total_regularization
from .scene import Camera, GaussianObject, Scene, orbit_camera
from .trajectory import Trajectory

NUM_LEVELS = 1000
STREAMS = ("mode", "camera", "frames", "noise", "init")
HISTORY_FIELDS = ("iteration", "phase", "mode", "sds_image", "sds_multiview", "sds_video",
                  "reg_total", "rigidity", "acceleration", "contact")


@dataclass(frozen=True)
class SDSConfig:
    t_min: float = 0.02
    t_max: float = 0.98
    weighting: str = "constant"
    omega_sd_static: float = 1.0
    omega_mv: float = 1.0
    omega_sd_dyn: float = 1.0
    omega_vid: float = 1.0
    p_single: float = 0.2
    frames: int = 16
    image_subsample: int = 4
    iterations: int = 3000
    lr: float = 1e-4
    static_iterations: int = 0
    static_lr: float = 1e-2
    multiview_views: int = 4
    camera_radius: float = 6.0
    azimuth_range: tuple[float, float] = (0.0, 360.0)
    elevation_range: tuple[float, float] = (-10.0, 45.0)
    vertical_fov_deg: float = 40.0
    height: int = 320
    width: int = 576
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 < self.t_min <= self.t_max < 1.0:
            raise ContractError("noise range must satisfy 0 < t_min <= t_max < 1")
        if self.weighting not in WEIGHTINGS:
            raise ContractError(f"unknown weighting {self.weighting!r}")
        weights = (self.omega_sd_static, self.omega_mv, self.omega_sd_dyn, self.omega_vid)
        if min(weights) < 0:
            raise ContractError("SDS weights must be non-negative")
        if not 0.0 <= self.p_single <= 1.0:
            raise ContractError("p_single must be a probability")
        if self.frames < 3:
            raise ContractError("need at least 3 frames for the acceleration term")
        if not 0 <= self.image_subsample <= self.frames:
            raise ContractError("image_subsample must lie in [0, frames]")
        if self.iterations < 0 or self.static_iterations < 0:
            raise ContractError("iteration counts must be non-negative")
        if self.lr < 0 or self.static_lr < 0:
            raise ContractError("learning rates must be non-negative")
        if self.height <= 0 or self.width <= 0 or self.multiview_views < 1:
            raise ContractError("render size and view count must be positive")

    @property
    def p_joint(self) -> float:
        return 1.0 - self.p_single

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "SDSConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ContractError(f"unknown SDS config keys: {sorted(unknown)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in data.items()}
        return cls(**kw)


# ---------------------------------------------------------------------------
# noise schedule and the SDS gradient


def alpha_bar(t: float) -> float:
    level = min(max(int(round(t * NUM_LEVELS)), 1), NUM_LEVELS - 1)
    return 1.0 - level / NUM_LEVELS


WEIGHTINGS: dict[str, Callable[[float], float]] = {
    "constant": lambda t: 1.0,
    "one_minus_alpha": lambda t: 1.0 - alpha_bar(t),
}


@dataclass
class SDSSample:
    grad: np.ndarray
    t: float
    residual: float  # mean squared (eps_hat - eps)


def sds_sample(x, denoiser: Denoiser, y, rng: np.random.Generator, config: SDSConfig = SDSConfig(),
               weighting: Callable[[float], float] | None = None) -> SDSSample:
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericError("render contains non-finite values")
    t = float(rng.uniform(config.t_min, config.t_max))
    eps = rng.standard_normal(x.shape)
    ab = alpha_bar(t)
    x_t = math.sqrt(ab) * x + math.sqrt(1.0 - ab) * eps
    probe = NoiseProbe(x, eps) if denoiser.needs_probe else None
    eps_hat = np.asarray(denoiser.predict(x_t, y, t, probe), dtype=np.float64)
    if eps_hat.shape != x.shape:
        raise ContractError(f"denoiser returned shape {eps_hat.shape} for input {x.shape}")
    w = (weighting or WEIGHTINGS[config.weighting])(t)
    diff = eps_hat - eps
    return SDSSample(w * diff, t, float(np.mean(diff * diff)))


def sds_gradient(x, denoiser: Denoiser, y, rng: np.random.Generator, config: SDSConfig = SDSConfig(),
                 weighting: Callable[[float], float] | None = None) -> np.ndarray:
    """``w(t) (eps_hat(x_t; y, t) - eps)``: the SDS gradient with respect to the render."""
    return sds_sample(x, denoiser, y, rng, config, weighting).grad


# ---------------------------------------------------------------------------
# optimizer, sampling and RNG streams


class Adam:
    def __init__(self, params: list[np.ndarray], lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.b1, self.b2 = betas
        self.eps = eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.steps = 0

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ContractError("gradient list does not match parameter list")
        self.steps += 1
        c1 = 1.0 - self.b1**self.steps
        c2 = 1.0 - self.b2**self.steps
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def rng_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent counter-based generators, one per subsystem."""
    children = np.random.SeedSequence(seed).spawn(len(STREAMS))
    return {name: np.random.Generator(np.random.Philox(ss)) for name, ss in zip(STREAMS, children)}


def sample_render_mode(rng: np.random.Generator, p_single: float, n_objects: int) -> RenderMode:
    """Single-object render with probability ``p_single``, else joint.

    With one object the two modes coincide, so joint is returned.
    """
    single = rng.random() < p_single
    if not single or n_objects < 2:
        return RenderMode()
    return RenderMode.single(int(rng.integers(n_objects)))


def sample_camera(rng: np.random.Generator, config: SDSConfig) -> Camera:
    az = rng.uniform(*config.azimuth_range)
    el = rng.uniform(*config.elevation_range)
    return orbit_camera(az, el, config.camera_radius, height=config.height, width=config.width,
                        vertical_fov=np.deg2rad(config.vertical_fov_deg))


@dataclass
class DenoiserSet:
    image: Denoiser
    multiview: Denoiser
    video: Denoiser

    @classmethod
    def oracle(cls) -> "DenoiserSet":
        return cls(OracleDenoiser("image"), OracleDenoiser("multiview"), OracleDenoiser("video"))


# ---------------------------------------------------------------------------
# static stage


@dataclass
class StaticGrads:
    colors: np.ndarray
    opacities: np.ndarray
    centers: np.ndarray
    sds_image: float = 0.0
    sds_multiview: float = 0.0


def _object_scene(obj: GaussianObject) -> Scene:
    return Scene([obj], [Trajectory.stationary()])


def static_gradients(obj: GaussianObject, cameras: list[Camera], image_denoiser: Denoiser,
                     multiview_denoiser: Denoiser, config: SDSConfig, rng: np.random.Generator,
                     prompt: str | None = None) -> StaticGrads:
    """``omega_sd_static * g_image + omega_mv * g_multiview`` pulled back to static attributes.

    Image SDS uses the first camera; multiview SDS uses the stack of all views.
    The object is rendered undeformed at the origin.
    """
    if not cameras:
        raise ContractError("need at least one camera")
    scene = _object_scene(obj)
    text = prompt if prompt is not None else obj.entity_prompt
    zero = {0: np.zeros_like(obj.centers)}
    renders, ctxs = [], []
    for cam in cameras:
        out, fctx = render_frame(scene, cam, 0.0, RenderMode.single(0), zero, config.background)
        renders.append(out.image)
        ctxs.append(fctx)
    grads_img = [np.zeros_like(r) for r in renders]
    img = sds_sample(renders[0], image_denoiser, image_denoiser.embed(text), rng, config)
    grads_img[0] += config.omega_sd_static * img.grad
    mv = sds_sample(np.stack(renders), multiview_denoiser, multiview_denoiser.embed(text), rng, config)
    for v in range(len(renders)):
        grads_img[v] += config.omega_mv * mv.grad[v]
    out = StaticGrads(np.zeros_like(obj.colors), np.zeros_like(obj.opacities), np.zeros_like(obj.centers),
                      img.residual, mv.residual)
    for fctx, g in zip(ctxs, grads_img):
        if not np.any(g):
            continue
        og = frame_backward(scene, fctx, g)[0]
        out.colors += og.colors
        out.opacities += og.opacities
        out.centers += og.centers
    return out


def static_views(rng: np.random.Generator, config: SDSConfig) -> list[Camera]:
    """A sampled base view plus evenly spaced azimuth offsets for multiview SDS."""
    base = sample_camera(rng, config)
    rel = base.position - base.look_at
    az = np.degrees(np.arctan2(rel[1], rel[0]))
    el = np.degrees(np.arcsin(np.clip(rel[2] / np.linalg.norm(rel), -1.0, 1.0)))
    cams = [base]
    for v in range(1, config.multiview_views):
        cams.append(orbit_camera(az + 360.0 * v / config.multiview_views, el, config.camera_radius,
                                 height=config.height, width=config.width,
                                 vertical_fov=np.deg2rad(config.vertical_fov_deg)))
    return cams


class StaticOptimizer:
    """Adam over one object's colors, opacities and centers; values are clamped after each step."""

    def __init__(self, obj: GaussianObject, lr: float):
        self.obj = obj
        self.adam = Adam([obj.colors, obj.opacities, obj.centers], lr)

    def step(self, g: StaticGrads) -> None:
        self.adam.step([g.colors, g.opacities, g.centers])
        np.clip(self.obj.colors, 0.0, 1.0, out=self.obj.colors)
        np.clip(self.obj.opacities, 0.0, 1.0, out=self.obj.opacities)


def static_sds_step(obj: GaussianObject, cameras: list[Camera], image_denoiser: Denoiser,
                    multiview_denoiser: Denoiser, config: SDSConfig, rng: np.random.Generator,
                    optimizer: StaticOptimizer | None = None) -> StaticGrads:
    optimizer = optimizer or StaticOptimizer(obj, config.static_lr)
    g = static_gradients(obj, cameras, image_denoiser, multiview_denoiser, config, rng)
    optimizer.step(g)
    return g


# ---------------------------------------------------------------------------
# dynamic stage


@dataclass
class DynamicReport:
    mode: RenderMode
    sds_image: float
    sds_video: float
    reg: RegTerms
    grads: dict[int, list[np.ndarray]] = field(default_factory=dict)


def dynamic_gradients(scene: Scene, cam: Camera, mode: RenderMode, video_denoiser: Denoiser,
                      image_denoiser: Denoiser, config: SDSConfig, rngs: dict[str, np.random.Generator],
                      reg_weights: RegWeights = RegWeights()) -> DynamicReport:
    """Deformation-parameter gradients for one clip render under ``mode``."""
    times = scene.time_grid
    if len(times) != config.frames:
        raise ContractError(f"scene has {len(times)} timesteps, config expects {config.frames}")
    n_obj = len(scene.objects)
    caches, deltas = [], []
    for obj in scene.objects:
        net = obj.deformation
        cache = net.forward(net.inputs(obj.centers, times))
        caches.append(cache)
        deltas.append(cache.output)

    active = mode.active(n_obj)
    renders, ctxs = [], []
    for f, s in enumerate(times):
        out, fctx = render_frame(scene, cam, float(s), mode, {o: deltas[o][f] for o in active},
                                 config.background)
        renders.append(out.image)
        ctxs.append(fctx)
    clip = np.stack(renders)
    text = scene.objects[active[0]].entity_prompt if mode.kind != "joint" else scene.scene_prompt
    vid = sds_sample(clip, video_denoiser, video_denoiser.embed(text), rngs["noise"], config)
    grad_clip = config.omega_vid * vid.grad
    chosen = np.sort(rngs["frames"].choice(len(times), size=config.image_subsample, replace=False))
    y_img = image_denoiser.embed(text)
    img_res = []
    for f in chosen:
        s = sds_sample(clip[f], image_denoiser, y_img, rngs["noise"], config)
        grad_clip[f] += config.omega_sd_dyn * s.grad
        img_res.append(s.residual)

    gdelta = [np.zeros_like(d) for d in deltas]
    for f, fctx in enumerate(ctxs):
        if not np.any(grad_clip[f]):
            continue
        for o, og in frame_backward(scene, fctx, grad_clip[f]).items():
            gdelta[o][f] += og.deltas

    placed, jacs = [], []
    for o, obj in enumerate(scene.objects):
        poses = [object_pose(scene, o, float(s), RenderMode()) for s in times]
        placed.append(np.stack([p.apply(obj.centers + deltas[o][f]) for f, p in enumerate(poses)]))
        jacs.append(np.stack([p.jacobian for p in poses]))
    terms, rgrads = total_regularization(deltas, [o.knn_cache for o in scene.objects], placed, jacs, reg_weights)
    report = DynamicReport(mode, float(np.mean(img_res)) if img_res else 0.0, vid.residual, terms)
    for o, obj in enumerate(scene.objects):
        report.grads[o] = obj.deformation.backward(caches[o], gdelta[o] + rgrads[o])
    return report


def dynamic_sds_step(scene: Scene, cam: Camera, video_denoiser: Denoiser, image_denoiser: Denoiser,
                     config: SDSConfig, rngs: dict[str, np.random.Generator], optimizers: list[Adam],
                     reg_weights: RegWeights = RegWeights(), mode: RenderMode | None = None) -> DynamicReport:
    """Sample a render mode, compute gradients and step every deformation net.

    Static Gaussian attributes are never touched here.
    """
    if mode is None:
        mode = sample_render_mode(rngs["mode"], config.p_single, len(scene.objects))
    report = dynamic_gradients(scene, cam, mode, video_denoiser, image_denoiser, config, rngs, reg_weights)
    for o, opt in enumerate(optimizers):
        opt.step(report.grads[o])
    return report


# ---------------------------------------------------------------------------
# training loop


def copy_scene(scene: Scene) -> Scene:
    return Scene([o.copy() for o in scene.objects], list(scene.trajectories), scene.scene_prompt,
                 scene.time_grid.copy())


def _mode_label(mode: RenderMode) -> str:
    return "joint" if mode.kind == "joint" else f"single:{mode.index}"


def _check_finite(row: dict, scene: Scene, iteration: int) -> None:
    values = [v for k, v in row.items() if isinstance(v, float)]
    if not all(math.isfinite(v) for v in values):
        raise DivergenceError(f"non-finite loss at iteration {iteration}", checkpoint=scene)


def train(scene: Scene, config: SDSConfig = SDSConfig(), denoisers: DenoiserSet | None = None, seed: int = 0,
          reg_weights: RegWeights = RegWeights(), history_path=None, progress=None) -> tuple[Scene, list[dict]]:
    """Run the static then the dynamic phase on a copy of ``scene``.

    Returns the optimized copy and one history row per iteration.  A
    non-finite loss or render aborts with :class:`DivergenceError` carrying
    the scene as it was at the failing iteration.
    """
    denoisers = denoisers or DenoiserSet.oracle()
    scene = copy_scene(scene)
    rngs = rng_streams(seed)
    history: list[dict] = []

    static_opts = [StaticOptimizer(o, config.static_lr) for o in scene.objects]
    for it in range(config.static_iterations):
        for o, (obj, opt) in enumerate(zip(scene.objects, static_opts)):
            cams = static_views(rngs["camera"], config)
            try:
                g = static_sds_step(obj, cams, denoisers.image, denoisers.multiview, config, rngs["noise"], opt)
            except NumericError as exc:
                raise DivergenceError(f"static iteration {it}: {exc}", checkpoint=scene) from exc
            row = {"iteration": it, "phase": "static", "mode": f"single:{o}",
                   "sds_image": g.sds_image, "sds_multiview": g.sds_multiview, "sds_video": 0.0,
                   "reg_total": 0.0, "rigidity": 0.0, "acceleration": 0.0, "contact": 0.0}
            _check_finite(row, scene, it)
            history.append(row)
        if progress:
            progress("static", it)

    optimizers = [Adam(o.deformation.parameters(), config.lr) for o in scene.objects]
    for it in range(config.iterations):
        cam = sample_camera(rngs["camera"], config)
        try:
            rep = dynamic_sds_step(scene, cam, denoisers.video, denoisers.image, config, rngs, optimizers,
                                   reg_weights)
        except NumericError as exc:
            raise DivergenceError(f"dynamic iteration {it}: {exc}", checkpoint=scene) from exc
        row = {"iteration": it, "phase": "dynamic", "mode": _mode_label(rep.mode),
               "sds_image": rep.sds_image, "sds_multiview": 0.0, "sds_video": rep.sds_video,
               "reg_total": float(rep.reg.total), "rigidity": float(rep.reg.rigidity),
               "acceleration": float(rep.reg.acceleration), "contact": float(rep.reg.contact)}
        _check_finite(row, scene, it)
        history.append(row)
        if progress:
            progress("dynamic", it)

    if history_path is not None:
        write_history(history, history_path)
    return scene, history


def write_history(history: list[dict], path) -> None:
    with open(Path(path), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS)
        writer.writeheader()
        for row in history:
            writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
