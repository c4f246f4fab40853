"""Scene director: prompt decomposition, relative scales and trajectory proposals.

A chat client is asked for strict JSON that is validated against versioned
schemas.  After three failed attempts, or with no client at all, a
deterministic offline path takes over: entities are looked up in the
bundled scale table and the mover approaches the anchor in a straight line.
"""

from __future__ import annotations

import json
import logging
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources

import jsonschema
import numpy as np

from .errors import ContractError, UnrecoverablePlacementError, UnresolvedEntityError
from .llm import ChatClient
from .orientation import place_object
from .scene import Scene
from .trajectory import DEFAULT_SAMPLES, GRAVITY, MIN_FRACTION, TEMPLATES, CollisionReport, Trajectory, check_and_truncate

logger = logging.getLogger(__name__)

PROMPT_VERSION = "1"
RETRIES = 3
MAX_REQUERIES = 2
FALLBACK_START = (-3.0, 0.0, 0.5)

_SYSTEM = (
    "You set up short animated 3D scenes. Answer with one JSON object only, no prose, "
    "matching this JSON schema:\n{schema}"
)
_DECOMPOSE = (
    "Scene: {prompt!r}\nList the entities (at most two). Give each a standalone prompt, a size relative "
    "to the anchor entity (the one resting at the world origin, scale 1), and whether it moves."
)
_TRAJECTORY = (
    "Scene: {prompt!r}\nMoving entity: {mover!r} (relative scale {scale:g}). Anchor: {anchor!r} at the "
    "origin, about 1 unit across; z is up and gravity is {g} units/s^2. Pick a kinematics template and "
    "parameters in seconds so the mover's motion relative to the anchor matches the scene."
)
_REQUERY = (
    "That trajectory collides with the anchor after {fraction:.0%} of its duration. "
    "Propose a different one that stays collision free for longer."
)


# ---------------------------------------------------------------------------
# bundled data


@lru_cache(maxsize=None)
def load_schema(name: str) -> dict:
    text = resources.files("compscene").joinpath("data", "schemas", f"{name}.json").read_text("utf-8")
    return json.loads(text)


@lru_cache(maxsize=None)
def _bundled_table() -> dict:
    text = resources.files("compscene").joinpath("data", "scale_table.json").read_text("utf-8")
    return json.loads(text)


def scale_table() -> dict[str, float]:
    return dict(_bundled_table()["entities"])


def _aliases() -> dict[str, str]:
    return dict(_bundled_table()["aliases"])


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class Entity:
    name: str
    entity_prompt: str
    relative_scale: float
    moving: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "entity_prompt": self.entity_prompt,
                "relative_scale": self.relative_scale, "moving": self.moving}


@dataclass(frozen=True)
class SceneBrief:
    scene_prompt: str
    entities: tuple[Entity, ...]
    anchor_entity: str
    source: str = "offline"

    def __post_init__(self):
        names = [e.name for e in self.entities]
        if not self.scene_prompt.strip():
            raise ContractError("scene prompt is empty")
        if names.count(self.anchor_entity) != 1:
            raise ContractError(f"anchor {self.anchor_entity!r} must name exactly one entity")
        if len(set(names)) != len(names):
            raise ContractError("entity names must be unique")
        for e in self.entities:
            if not e.entity_prompt.strip():
                raise ContractError(f"entity {e.name!r} has an empty prompt")
            if not (math.isfinite(e.relative_scale) and e.relative_scale > 0):
                raise ContractError(f"entity {e.name!r} needs a positive scale")

    @property
    def anchor(self) -> Entity:
        return next(e for e in self.entities if e.name == self.anchor_entity)

    @property
    def mover(self) -> Entity | None:
        return next((e for e in self.entities if e.name != self.anchor_entity), None)

    def to_dict(self) -> dict:
        return {"scene_prompt": self.scene_prompt, "entities": [e.to_dict() for e in self.entities],
                "anchor_entity": self.anchor_entity, "source": self.source,
                "prompt_version": PROMPT_VERSION}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneBrief":
        ents = tuple(Entity(e["name"], e["entity_prompt"], float(e["relative_scale"]), bool(e["moving"]))
                     for e in data["entities"])
        return cls(data["scene_prompt"], ents, data["anchor_entity"], data.get("source", "offline"))


@dataclass(frozen=True)
class TrajectoryProposal:
    """A template and its parameters in seconds, plus the claimed duration.

    :meth:`to_trajectory` maps the duration onto the unit scene clock:
    velocities scale by the duration, accelerations by its square.
    """

    template: str
    parameters: dict = field(default_factory=dict)
    duration_seconds: float = 1.0
    rationale: str = ""
    source: str = "offline"

    def __post_init__(self):
        if self.template not in TEMPLATES:
            raise ContractError(f"unknown trajectory template {self.template!r}")
        for key, value in self.parameters.items():
            try:
                finite = np.all(np.isfinite(np.asarray(value, dtype=np.float64)))
            except OverflowError:
                finite = False
            if not finite:
                raise ContractError(f"parameter {key!r} is not finite")
        if not (math.isfinite(self.duration_seconds) and self.duration_seconds > 0):
            raise ContractError("duration must be positive and finite")

    @property
    def time_scale(self) -> float:
        """Seconds per unit of scene time."""
        return self.duration_seconds

    def vector(self, name: str, default=(0.0, 0.0, 0.0)) -> np.ndarray:
        return np.asarray(self.parameters.get(name, default), dtype=np.float64)

    def to_trajectory(self) -> Trajectory:
        d = self.time_scale
        if self.template == "circular":
            return Trajectory.circular(self.vector("center"), float(self.parameters["radius"]),
                                       float(self.parameters["angular_velocity"]) * d)
        p0 = self.vector("initial_position")
        with np.errstate(over="ignore"):
            v = self.vector("initial_velocity") * d
            a = self.vector("acceleration", (0.0, 0.0, -GRAVITY)) * (d * d)
            bound = np.abs(p0) + np.abs(v) + 0.5 * np.abs(a)
        if not np.all(np.isfinite(bound)):
            raise ContractError("trajectory positions overflow on the scene clock")
        if self.template == "constant_velocity":
            return Trajectory.constant_velocity(p0, v)
        return Trajectory.projectile(p0, v, a)

    def to_dict(self) -> dict:
        return {"template": self.template, "parameters": self.parameters,
                "duration_seconds": self.duration_seconds, "time_scale": self.time_scale,
                "rationale": self.rationale, "source": self.source}


# ---------------------------------------------------------------------------
# JSON exchange


def _reject_constant(name):
    raise ValueError(f"non-finite JSON constant {name}")


def parse_response(text: str, schema: dict) -> dict:
    """Parse a JSON reply (tolerating a code fence) and validate it; never evaluates code."""
    body = text.strip()
    fence = re.match(r"^```(?:json)?\s*(.*?)\s*```$", body, re.S)
    if fence:
        body = fence.group(1)
    obj = json.loads(body, parse_constant=_reject_constant)
    jsonschema.validate(obj, schema)
    return obj


def ask_json(client: ChatClient, user: str, schema: dict, build, retries: int = RETRIES):
    """Query ``client`` until ``build(parse_response(...))`` succeeds; ``None`` after ``retries`` failures."""
    messages = [{"role": "system", "content": _SYSTEM.format(schema=json.dumps(schema, sort_keys=True))},
                {"role": "user", "content": user}]
    for attempt in range(1, retries + 1):
        text = client.complete(list(messages))
        try:
            return build(parse_response(text, schema))
        except (ValueError, OverflowError, jsonschema.ValidationError, KeyError, TypeError) as exc:
            logger.warning("director reply rejected (%d/%d): %s", attempt, retries, exc)
            messages.append({"role": "assistant", "content": text[:4000]})
            messages.append({"role": "user", "content": f"Invalid reply ({exc}). Return only a corrected JSON object."})
    return None


# ---------------------------------------------------------------------------
# decomposition


def find_entities(prompt: str) -> list[str]:
    """Table entities mentioned in ``prompt``, in order of first mention."""
    text = prompt.lower()
    names = {**{n: n for n in scale_table()}, **_aliases()}
    hits = []
    for word, canon in names.items():
        m = re.search(rf"\b{re.escape(word)}(?:e?s)?\b", text)
        if m:
            hits.append((m.start(), canon))
    hits.sort()
    ordered = []
    for _, canon in hits:
        if canon not in ordered:
            ordered.append(canon)
    return ordered


def offline_brief(prompt: str) -> SceneBrief:
    """First mentioned entity moves; the second is the anchor; scales are table ratios."""
    found = find_entities(prompt)
    if not found:
        raise UnresolvedEntityError(f"no known entity in {prompt!r}; add it to the scale table")
    if len(found) > 2:
        raise ContractError(f"scenes with more than two entities are not supported: {found}")
    table = scale_table()
    if len(found) == 1:
        name = found[0]
        return SceneBrief(prompt, (Entity(name, f"a {name}", 1.0, False),), name)
    mover, anchor = found
    scale = table[mover] / table[anchor]
    ents = (Entity(mover, f"a {mover}", scale, True), Entity(anchor, f"a {anchor}", 1.0, False))
    return SceneBrief(prompt, ents, anchor)


def _brief_from_reply(prompt: str):
    def build(obj: dict) -> SceneBrief:
        anchor = obj["anchor_entity"]
        ents = obj["entities"]
        ref = next(e["relative_scale"] for e in ents if e["name"] == anchor)
        out = tuple(Entity(e["name"], e["entity_prompt"], float(e["relative_scale"]) / ref,
                           bool(e["moving"]) and e["name"] != anchor) for e in ents)
        return SceneBrief(prompt, out, anchor, "client")
    return build


def decompose(scene_prompt: str, client: ChatClient | None = None, retries: int = RETRIES) -> SceneBrief:
    """Split a scene prompt into entities with scales normalized to the anchor."""
    if not scene_prompt or not scene_prompt.strip():
        raise ContractError("scene prompt is empty")
    if client is not None:
        user = _DECOMPOSE.format(prompt=scene_prompt)
        brief = ask_json(client, user, load_schema("scene_brief.v1"), _brief_from_reply(scene_prompt), retries)
        if brief is not None:
            return brief
        logger.warning("falling back to the offline scale table")
    return offline_brief(scene_prompt)


# ---------------------------------------------------------------------------
# trajectories


def offline_proposal(brief: SceneBrief) -> TrajectoryProposal:
    """Straight-line approach toward the anchor from three anchor-sizes away."""
    p0 = np.asarray(FALLBACK_START) * brief.anchor.relative_scale
    return TrajectoryProposal("constant_velocity", {"initial_position": p0.tolist(),
                                                    "initial_velocity": (0.0 - p0).tolist()},
                              1.0, "straight-line approach fallback", "offline")


def _proposal_from_reply(obj: dict) -> TrajectoryProposal:
    prop = TrajectoryProposal(obj["template"], dict(obj["parameters"]), float(obj.get("duration_seconds", 1.0)),
                              obj.get("rationale", ""), "client")
    prop.to_trajectory()  # reject replies that overflow once rescaled
    return prop


def _trajectory_request(brief: SceneBrief) -> str:
    mover = brief.mover
    return _TRAJECTORY.format(prompt=brief.scene_prompt, mover=mover.name if mover else brief.anchor_entity,
                              scale=mover.relative_scale if mover else 1.0, anchor=brief.anchor_entity, g=GRAVITY)


def propose_trajectory(brief: SceneBrief, client: ChatClient | None = None, retries: int = RETRIES,
                       feedback: str | None = None) -> TrajectoryProposal:
    if client is not None:
        user = _trajectory_request(brief)
        if feedback:
            user = f"{user}\n{feedback}"
        prop = ask_json(client, user, load_schema("trajectory_proposal.v1"), _proposal_from_reply, retries)
        if prop is not None:
            return prop
        logger.warning("falling back to the straight-line trajectory")
    return offline_proposal(brief)


@dataclass
class Refinement:
    trajectory: Trajectory
    proposal: TrajectoryProposal
    report: CollisionReport
    candidates: list[tuple[TrajectoryProposal, CollisionReport | None]]


def refine_with_report(proposal: TrajectoryProposal, scene: Scene, client: ChatClient | None = None, *,
                       brief: SceneBrief | None = None, mover: int = 0, max_requeries: int = MAX_REQUERIES,
                       n_samples: int = DEFAULT_SAMPLES, min_fraction: float = MIN_FRACTION) -> Refinement:
    """Collision-check ``proposal`` for ``scene.objects[mover]`` and re-query while too short.

    Other objects stay at their trajectories' starting poses.  The candidate
    with the longest collision-free domain wins.
    """
    obj = scene.objects[mover]
    others = []
    for o, other in enumerate(scene.objects):
        if o != mover:
            traj = scene.trajectories[o]
            others.append(place_object(other, traj, 0.0, np.linspace(0.0, traj.t_max, n_samples)))
    candidates = []
    best = None
    budget = max_requeries if client is not None and brief is not None else 0
    current = proposal
    for attempt in range(budget + 1):
        try:
            traj, report = check_and_truncate(current.to_trajectory(), obj, others, n_samples, min_fraction)
        except UnrecoverablePlacementError:
            candidates.append((current, None))
            traj = report = None
        else:
            candidates.append((current, report))
            if best is None or report.t_max > best[2].t_max:
                best = (traj, current, report)
        if report is not None and not report.requery:
            break
        if attempt < budget:
            frac = report.t_max / report.original_t_max if report is not None else 0.0
            current = propose_trajectory(brief, client, feedback=_REQUERY.format(fraction=frac))
    if best is None:
        raise UnrecoverablePlacementError("every trajectory candidate collides at t = 0")
    return Refinement(best[0], best[1], best[2], candidates)


def refine(proposal: TrajectoryProposal, scene: Scene, client: ChatClient | None = None, **kwargs) -> Trajectory:
    return refine_with_report(proposal, scene, client, **kwargs).trajectory
