"""Pluggable noise predictors for score distillation.

A denoiser maps ``(x_t, y, t)`` to a predicted noise map of the same shape.
The built-ins here are analytic or replayed, never learned:

* ``oracle`` returns the injected noise exactly, so every SDS gradient is 0.
* ``target_image`` predicts ``eps + (x - target)``, pulling renders to a target.
* ``recorded`` replays noise maps saved from an earlier run.

The first two need the clean render and the injected noise; they declare
``needs_probe = True`` and the distillation code hands them a
:class:`NoiseProbe`.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ContractError

MODALITIES = ("image", "multiview", "video")


@dataclass
class NoiseProbe:
    clean: np.ndarray
    noise: np.ndarray


class Denoiser:
    modality = "image"
    needs_probe = False
    embedding_dim = 16

    def embed(self, text: str) -> np.ndarray:
        """Deterministic opaque prompt embedding."""
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        raw = np.frombuffer(digest, dtype=np.uint8)[: self.embedding_dim].astype(np.float64)
        return raw / 255.0 * 2.0 - 1.0

    def predict(self, x_t: np.ndarray, y: np.ndarray, t: float, probe: NoiseProbe | None = None) -> np.ndarray:
        raise NotImplementedError


class OracleDenoiser(Denoiser):
    needs_probe = True

    def __init__(self, modality: str = "image"):
        self.modality = modality

    def predict(self, x_t, y, t, probe=None):
        if probe is None:
            raise ContractError("oracle denoiser needs the injected noise")
        return probe.noise.copy()


class TargetImageDenoiser(Denoiser):
    """Analytic denoiser whose residual is the distance to a fixed target."""

    needs_probe = True

    def __init__(self, target: np.ndarray, modality: str = "image"):
        self.target = np.asarray(target, dtype=np.float64)
        self.modality = modality

    @classmethod
    def from_file(cls, path, height: int, width: int, modality: str = "image") -> "TargetImageDenoiser":
        img = Image.open(path).convert("RGB").resize((width, height), Image.BILINEAR)
        return cls(np.asarray(img, dtype=np.float64) / 255.0, modality)

    def predict(self, x_t, y, t, probe=None):
        if probe is None:
            raise ContractError("target-image denoiser needs the clean render")
        target = np.broadcast_to(self.target, probe.clean.shape)
        return probe.noise + (probe.clean - target)


class RecordedDenoiser(Denoiser):
    """Replays a sequence of noise maps in call order."""

    def __init__(self, responses, modality: str = "image"):
        self.responses = [np.asarray(r, dtype=np.float64) for r in responses]
        self.modality = modality
        self.cursor = 0

    @classmethod
    def from_file(cls, path, modality: str = "image") -> "RecordedDenoiser":
        with np.load(path) as data:
            keys = sorted(data.files, key=lambda k: int(k.rsplit("_", 1)[-1]))
            return cls([data[k] for k in keys], modality)

    def predict(self, x_t, y, t, probe=None):
        if self.cursor >= len(self.responses):
            raise ContractError("recorded denoiser ran out of responses")
        eps = self.responses[self.cursor]
        if eps.shape != np.shape(x_t):
            raise ContractError(f"recorded response shape {eps.shape} != input shape {np.shape(x_t)}")
        self.cursor += 1
        return eps.copy()


class RecordingDenoiser(Denoiser):
    """Wraps another denoiser and keeps every prediction for later replay."""

    def __init__(self, inner: Denoiser):
        self.inner = inner
        self.modality = inner.modality
        self.needs_probe = inner.needs_probe
        self.responses: list[np.ndarray] = []

    def embed(self, text):
        return self.inner.embed(text)

    def predict(self, x_t, y, t, probe=None):
        eps = self.inner.predict(x_t, y, t, probe)
        self.responses.append(np.array(eps, copy=True))
        return eps

    def save(self, path) -> None:
        np.savez(Path(path), **{f"eps_{i}": r for i, r in enumerate(self.responses)})


def make_denoiser(name: str, modality: str = "image", **options) -> Denoiser:
    """Build a built-in denoiser by config name."""
    if modality not in MODALITIES:
        raise ContractError(f"unknown modality {modality!r}")
    if name == "oracle":
        return OracleDenoiser(modality)
    if name == "target_image":
        if "target" in options:
            return TargetImageDenoiser(options["target"], modality)
        return TargetImageDenoiser.from_file(options["path"], options["height"], options["width"], modality)
    if name == "recorded":
        return RecordedDenoiser.from_file(options["path"], modality)
    raise ContractError(f"unknown denoiser {name!r}")
