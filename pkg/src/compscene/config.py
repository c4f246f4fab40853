"""Pipeline configuration: JSON load/save with schema validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import jsonschema

from .director import load_schema
from .distillation import SDSConfig
from .errors import ConfigError, ContractError
from .regularizers import RegWeights
from .scene import DEFAULT_K
from .shapes import SHAPES

_SDS_OWNED = ("height", "width", "frames")


@dataclass(frozen=True)
class EntityAsset:
    shape: str | None = None
    ply: str | None = None
    color: tuple[float, float, float] | None = None

    def to_dict(self) -> dict:
        out = {}
        if self.shape is not None:
            out["shape"] = self.shape
        if self.ply is not None:
            out["ply"] = self.ply
        if self.color is not None:
            out["color"] = list(self.color)
        return out


@dataclass(frozen=True)
class PipelineConfig:
    scene_prompt: str
    seed: int
    offline: bool = True
    output_dir: str = "runs"
    points_per_object: int = 2000
    knn: int = DEFAULT_K
    render_azimuths: tuple[float, ...] = (90.0,)
    denoiser: str = "oracle"
    denoiser_options: dict = field(default_factory=dict)
    entities: dict[str, EntityAsset] = field(default_factory=dict)
    sds: SDSConfig = field(default_factory=SDSConfig)
    regularizers: RegWeights = field(default_factory=RegWeights)
    replay_transcript: str | None = None

    def __post_init__(self):
        if not self.scene_prompt.strip():
            raise ConfigError("scene_prompt is empty")
        if not isinstance(self.seed, int) or not 0 <= self.seed < 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.points_per_object < 2 or self.knn < 1:
            raise ConfigError("points_per_object must be >= 2 and knn >= 1")
        for name, asset in self.entities.items():
            if asset.shape is not None and asset.shape not in SHAPES:
                raise ConfigError(f"entity {name!r}: unknown shape {asset.shape!r}")
            if asset.shape is not None and asset.ply is not None:
                raise ConfigError(f"entity {name!r}: give a shape or a ply path, not both")

    @property
    def resolution(self) -> tuple[int, int]:
        return self.sds.height, self.sds.width

    @property
    def frames(self) -> int:
        return self.sds.frames

    def to_dict(self) -> dict:
        sds = {k: v for k, v in self.sds.to_dict().items() if k not in _SDS_OWNED}
        out = {
            "scene_prompt": self.scene_prompt,
            "seed": self.seed,
            "offline": self.offline,
            "output_dir": self.output_dir,
            "resolution": list(self.resolution),
            "frames": self.frames,
            "points_per_object": self.points_per_object,
            "knn": self.knn,
            "render_azimuths": list(self.render_azimuths),
            "denoiser": self.denoiser,
            "denoiser_options": dict(self.denoiser_options),
            "entities": {k: v.to_dict() for k, v in self.entities.items()},
            "sds": sds,
            "regularizers": {"omega1": self.regularizers.omega1, "omega2": self.regularizers.omega2,
                             "contact": self.regularizers.contact},
        }
        if self.replay_transcript is not None:
            out["replay_transcript"] = self.replay_transcript
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        try:
            jsonschema.validate(data, load_schema("pipeline_config.v1"))
        except jsonschema.ValidationError as exc:
            raise ConfigError(f"invalid config: {exc.message}") from exc
        try:
            sds = SDSConfig.from_dict(dict(data.get("sds", {})))
            height, width = data.get("resolution", [sds.height, sds.width])
            sds = replace(sds, height=height, width=width, frames=data.get("frames", sds.frames))
            reg = RegWeights(**data.get("regularizers", {}))
        except (ContractError, TypeError) as exc:
            raise ConfigError(f"invalid config: {exc}") from exc
        entities = {k: EntityAsset(v.get("shape"), v.get("ply"), tuple(v["color"]) if "color" in v else None)
                    for k, v in data.get("entities", {}).items()}
        return cls(
            scene_prompt=data["scene_prompt"],
            seed=data["seed"],
            offline=data.get("offline", True),
            output_dir=data.get("output_dir", "runs"),
            points_per_object=data.get("points_per_object", 2000),
            knn=data.get("knn", DEFAULT_K),
            render_azimuths=tuple(float(a) for a in data.get("render_azimuths", [90.0])),
            denoiser=data.get("denoiser", "oracle"),
            denoiser_options=dict(data.get("denoiser_options", {})),
            entities=entities,
            sds=sds,
            regularizers=reg,
            replay_transcript=data.get("replay_transcript"),
        )

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "PipelineConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        return cls.from_dict(data)


def load_config(path) -> PipelineConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return PipelineConfig.from_json(text)
