"""Time-conditioned deformation field for Gaussian centers.

Each object owns a small coordinate network mapping a normalized
``(x, y, z, t)`` sample to a 3D displacement.  Inputs go through a sin/cos
positional encoding (4 inputs x 4 bands x 2 = 32 features) and a tanh MLP
whose output layer starts at exactly zero, so a fresh network leaves the
static cloud untouched.

Gradients are computed analytically; no autograd framework is involved.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CheckpointError, ContractError

_MAGIC = b"DFN1"


@dataclass(frozen=True)
class PositionalEncoding:
    num_frequencies: int = 4
    include_input: bool = False
    num_inputs: int = 4

    @property
    def output_dim(self) -> int:
        dim = self.num_inputs * self.num_frequencies * 2
        if self.include_input:
            dim += self.num_inputs
        return dim

    @property
    def bands(self) -> np.ndarray:
        return np.pi * 2.0 ** np.arange(self.num_frequencies)

    def __call__(self, p: np.ndarray) -> np.ndarray:
        """Encode ``(..., num_inputs)`` samples into ``(..., output_dim)``.

        Layout per input coordinate i: ``[sin(f0 p_i), cos(f0 p_i), sin(f1 p_i), ...]``.
        """
        p = np.asarray(p, dtype=np.float64)
        if p.shape[-1] != self.num_inputs:
            raise ContractError(f"expected last axis of size {self.num_inputs}, got {p.shape}")
        arg = p[..., :, None] * self.bands  # (..., inputs, bands)
        enc = np.stack([np.sin(arg), np.cos(arg)], axis=-1)  # (..., inputs, bands, 2)
        enc = enc.reshape(*p.shape[:-1], -1)
        if self.include_input:
            enc = np.concatenate([p, enc], axis=-1)
        return enc


def encode(p, num_frequencies: int = 4) -> np.ndarray:
    return PositionalEncoding(num_frequencies=num_frequencies)(p)


@dataclass
class ForwardCache:
    inputs: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    output: np.ndarray


@dataclass
class DeformationNet:
    """MLP ``32 -> 64 -> 64 -> 64 -> 3`` with tanh hidden units.

    ``bbox_min``/``bbox_max`` describe the static cloud the net deforms and
    are used to map positions into ``[-1, 1]^3`` before encoding.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    encoding: PositionalEncoding = field(default_factory=PositionalEncoding)
    bbox_min: np.ndarray = field(default_factory=lambda: -np.ones(3))
    bbox_max: np.ndarray = field(default_factory=lambda: np.ones(3))

    @classmethod
    def create(
        cls,
        hidden: Sequence[int] = (64, 64, 64),
        encoding: PositionalEncoding | None = None,
        bbox: tuple[np.ndarray, np.ndarray] | None = None,
        rng: np.random.Generator | None = None,
        seed: int = 0,
    ) -> "DeformationNet":
        encoding = encoding or PositionalEncoding()
        rng = rng if rng is not None else np.random.default_rng(seed)
        widths = [encoding.output_dim, *hidden, 3]
        weights, biases = [], []
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            if i == len(widths) - 2:
                weights.append(np.zeros((fan_in, fan_out)))
            else:
                weights.append(rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        lo, hi = bbox if bbox is not None else (-np.ones(3), np.ones(3))
        return cls(weights, biases, encoding, np.asarray(lo, float).copy(), np.asarray(hi, float).copy())

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def copy(self) -> "DeformationNet":
        return DeformationNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.encoding,
            self.bbox_min.copy(),
            self.bbox_max.copy(),
        )

    def normalize(self, positions: np.ndarray) -> np.ndarray:
        extent = self.bbox_max - self.bbox_min
        extent = np.where(extent > 1e-12, extent, 1.0)
        return 2.0 * (np.asarray(positions, float) - self.bbox_min) / extent - 1.0

    def inputs(self, positions: np.ndarray, times: Sequence[float] | float) -> np.ndarray:
        """Encoded network inputs, shape ``(F, N, enc_dim)`` for F timesteps."""
        xyz = self.normalize(positions)
        times = np.atleast_1d(np.asarray(times, dtype=np.float64))
        n = xyz.shape[0]
        p = np.empty((times.size, n, 4))
        p[:, :, :3] = xyz[None]
        p[:, :, 3] = times[:, None]
        return self.encoding(p)

    def forward(self, x: np.ndarray) -> ForwardCache:
        pre, post = [], [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                pre.append(z)
                h = np.tanh(z)
                post.append(h)
            else:
                h = z
        return ForwardCache(x, pre, post, h)

    def backward(self, cache: ForwardCache, upstream: np.ndarray) -> list[np.ndarray]:
        """Parameter gradients of ``sum(upstream * output)``.

        Returned in the same order as :meth:`parameters`.
        """
        upstream = np.asarray(upstream, dtype=np.float64)
        if upstream.shape != cache.output.shape:
            raise ContractError(
                f"upstream gradient shape {upstream.shape} != output shape {cache.output.shape}"
            )
        g = upstream.reshape(-1, upstream.shape[-1])
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = cache.post[i].reshape(-1, cache.post[i].shape[-1])
            gw = h_in.T @ g
            gb = g.sum(axis=0)
            grads.append(gb)
            grads.append(gw)
            if i > 0:
                g = g @ self.weights[i].T
                a = cache.post[i].reshape(-1, cache.post[i].shape[-1])
                g = g * (1.0 - a * a)
        return grads[::-1]


def deform(net: DeformationNet, positions, t: float) -> np.ndarray:
    """Displacements for ``positions`` (N, 3) at timestep ``t``."""
    cache = net.forward(net.inputs(positions, t)[0])
    return cache.output


def backward(net: DeformationNet, positions, t: float, upstream_grads) -> list[np.ndarray]:
    cache = net.forward(net.inputs(positions, t)[0])
    return net.backward(cache, upstream_grads)


# ---------------------------------------------------------------------------
# checkpointing: magic, u32 header length, JSON header, float64 LE blob


def dumps(net: DeformationNet) -> bytes:
    header = {
        "widths": net.widths,
        "activation": "tanh",
        "encoding": {
            "num_frequencies": net.encoding.num_frequencies,
            "include_input": net.encoding.include_input,
            "num_inputs": net.encoding.num_inputs,
        },
        "bbox_min": net.bbox_min.tolist(),
        "bbox_max": net.bbox_max.tolist(),
        "shapes": [list(p.shape) for p in net.parameters()],
        "dtype": "<f8",
    }
    raw = json.dumps(header, sort_keys=True).encode()
    buf = io.BytesIO()
    buf.write(_MAGIC)
    buf.write(struct.pack("<I", len(raw)))
    buf.write(raw)
    for p in net.parameters():
        buf.write(np.ascontiguousarray(p, dtype="<f8").tobytes())
    return buf.getvalue()


def loads(data: bytes) -> DeformationNet:
    if len(data) < 8 or data[:4] != _MAGIC:
        raise CheckpointError("not a deformation checkpoint (bad magic)")
    (hlen,) = struct.unpack("<I", data[4:8])
    try:
        header = json.loads(data[8 : 8 + hlen])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt deformation header: {exc}") from exc
    offset = 8 + hlen
    params = []
    for shape in header["shapes"]:
        count = int(np.prod(shape))
        end = offset + 8 * count
        if end > len(data):
            raise CheckpointError("deformation blob truncated")
        params.append(np.frombuffer(data[offset:end], dtype="<f8").reshape(shape).astype(np.float64))
        offset = end
    if offset != len(data):
        raise CheckpointError("trailing bytes after deformation blob")
    enc = PositionalEncoding(**header["encoding"])
    return DeformationNet(
        params[0::2],
        params[1::2],
        enc,
        np.asarray(header["bbox_min"], float),
        np.asarray(header["bbox_max"], float),
    )


def save(net: DeformationNet, path) -> None:
    Path(path).write_bytes(dumps(net))


def load(path) -> DeformationNet:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(str(exc)) from exc
    return loads(data)
