"""Kinematic trajectory templates, sampling and collision truncation."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError, DomainError, UnrecoverablePlacementError
from .orientation import place_object
from .regularizers import collides

TEMPLATES = ("constant_velocity", "projectile", "circular")
DEFAULT_SAMPLES = 64
MIN_FRACTION = 0.3
GRAVITY = 9.8


def _vec(x) -> np.ndarray:
    return np.asarray(x, dtype=np.float64).reshape(3)


@dataclass(frozen=True)
class Trajectory:
    """Closed-form motion over normalized time ``[0, t_max]``.

    Kinematic templates evaluate ``p0 + v t + a t^2 / 2``; the circular
    template evaluates ``center + radius (cos wt, sin wt, 0)``.
    """

    initial_position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    initial_velocity: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acceleration: np.ndarray = field(default_factory=lambda: np.zeros(3))
    t_max: float = 1.0
    template: str = "projectile"
    center: np.ndarray = field(default_factory=lambda: np.zeros(3))
    radius: float = 0.0
    angular_velocity: float = 0.0

    def __post_init__(self):
        for name in ("initial_position", "initial_velocity", "acceleration", "center"):
            object.__setattr__(self, name, _vec(getattr(self, name)))
        if self.template not in TEMPLATES:
            raise ContractError(f"unknown trajectory template {self.template!r}")
        if not 0.0 < self.t_max <= 1.0:
            raise ContractError(f"t_max must lie in (0, 1], got {self.t_max}")
        values = np.concatenate([self.initial_position, self.initial_velocity, self.acceleration, self.center,
                                 [self.radius, self.angular_velocity, self.t_max]])
        if not np.all(np.isfinite(values)):
            raise ContractError("trajectory parameters must be finite")

    @classmethod
    def stationary(cls, position=(0.0, 0.0, 0.0)) -> "Trajectory":
        return cls(initial_position=position, template="constant_velocity")

    @classmethod
    def constant_velocity(cls, p0, v, t_max: float = 1.0) -> "Trajectory":
        return cls(initial_position=p0, initial_velocity=v, t_max=t_max, template="constant_velocity")

    @classmethod
    def projectile(cls, p0, v, a=(0.0, 0.0, -GRAVITY), t_max: float = 1.0) -> "Trajectory":
        return cls(initial_position=p0, initial_velocity=v, acceleration=a, t_max=t_max, template="projectile")

    @classmethod
    def circular(cls, center, radius: float, angular_velocity: float, t_max: float = 1.0) -> "Trajectory":
        return cls(center=center, radius=radius, angular_velocity=angular_velocity, t_max=t_max, template="circular")

    @property
    def t_domain(self) -> tuple[float, float]:
        return 0.0, self.t_max

    def position(self, t: float) -> np.ndarray:
        t = float(t)
        if not 0.0 <= t <= self.t_max:
            raise DomainError(f"t={t} outside trajectory domain [0, {self.t_max}]")
        if self.template == "circular":
            wt = self.angular_velocity * t
            return self.center + self.radius * np.array([np.cos(wt), np.sin(wt), 0.0])
        return self.initial_position + self.initial_velocity * t + 0.5 * self.acceleration * (t * t)

    def truncated(self, t_max: float) -> "Trajectory":
        return replace(self, t_max=t_max)

    def to_dict(self) -> dict:
        if self.template == "circular":
            params = {"center": self.center.tolist(), "radius": self.radius,
                      "angular_velocity": self.angular_velocity}
        else:
            params = {"initial_position": self.initial_position.tolist(),
                      "initial_velocity": self.initial_velocity.tolist()}
            if self.template == "projectile":
                params["acceleration"] = self.acceleration.tolist()
        return {"template": self.template, "parameters": params, "t_domain": [0.0, self.t_max]}

    @classmethod
    def from_dict(cls, data: dict) -> "Trajectory":
        try:
            template = data["template"]
            params = dict(data["parameters"])
            t_max = float(data.get("t_domain", [0.0, 1.0])[1])
        except (KeyError, TypeError, IndexError) as exc:
            raise ContractError(f"malformed trajectory record: {exc}") from exc
        if template == "circular":
            return cls.circular(params["center"], float(params["radius"]), float(params["angular_velocity"]), t_max)
        if template == "constant_velocity":
            return cls.constant_velocity(params["initial_position"], params["initial_velocity"], t_max)
        if template == "projectile":
            return cls.projectile(params["initial_position"], params["initial_velocity"],
                                  params.get("acceleration", (0.0, 0.0, -GRAVITY)), t_max)
        raise ContractError(f"unknown trajectory template {template!r}")


def position_at(traj: Trajectory, t: float) -> np.ndarray:
    return traj.position(t)


def sample_uniform(traj: Trajectory, n_samples: int) -> tuple[np.ndarray, np.ndarray]:
    """``n_samples`` equally spaced times over the domain (inclusive) and their positions."""
    if n_samples < 2:
        raise ContractError("need at least 2 samples")
    ts = np.linspace(0.0, traj.t_max, n_samples)
    ts[-1] = traj.t_max
    return ts, np.stack([traj.position(t) for t in ts])


@dataclass
class CollisionReport:
    first_collision_t: float | None = None
    original_t_max: float = 1.0
    t_max: float = 1.0
    requery: bool = False

    @property
    def collided(self) -> bool:
        return self.first_collision_t is not None

    def to_dict(self) -> dict:
        return {"first_collision_t": self.first_collision_t, "original_t_max": self.original_t_max,
                "t_max": self.t_max, "requery": self.requery}


def check_and_truncate(
    traj: Trajectory,
    moving_object,
    other_objects_placed,
    n_samples: int = DEFAULT_SAMPLES,
    min_fraction: float = MIN_FRACTION,
) -> tuple[Trajectory, CollisionReport]:
    """Clip ``traj`` to the last collision-free sample before the first contact.

    ``other_objects_placed`` is a list of world-space center arrays.  The
    report requests a re-query when less than ``min_fraction`` of the
    original domain survives.
    """
    ts, _ = sample_uniform(traj, n_samples)
    report = CollisionReport(original_t_max=traj.t_max, t_max=traj.t_max)
    for i, t in enumerate(ts):
        placed = place_object(moving_object, traj, t, ts)
        if any(collides(placed, other) for other in other_objects_placed):
            if i == 0:
                raise UnrecoverablePlacementError("object already intersects another at t = 0")
            report.first_collision_t = float(t)
            report.t_max = float(ts[i - 1])
            report.requery = report.t_max < min_fraction * traj.t_max
            return traj.truncated(report.t_max), report
    return traj, report
