"""Geometric regularizers on deformation fields and object placements.

Every loss returns ``(value, gradient)`` where the gradient has the shape of
the input it differentiates.  Values use plain norms, with norms below
``EPS`` counted as zero.  Gradients use ``sqrt(|v|^2 + EPS^2)`` so they stay
defined where neighbors move identically.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError

EPS = 1e-8


@dataclass(frozen=True)
class RegWeights:
    omega1: float = 1e-4  # acceleration
    omega2: float = 1e3  # rigidity
    contact: float = 1.0

    def __post_init__(self):
        if min(self.omega1, self.omega2, self.contact) < 0:
            raise ContractError("regularization weights must be non-negative")


def _smooth_norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt((v * v).sum(axis=-1) + EPS * EPS)


def _penalty(v: np.ndarray) -> float:
    # bare norms for the value; differences below the smoothing scale are roundoff
    bare = np.sqrt((v * v).sum(axis=-1))
    return float(np.where(bare > EPS, bare, 0.0).sum())


def rigidity_loss(deltas: np.ndarray, knn: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean over Gaussians of the mean distance between a displacement and its neighbors'."""
    deltas = np.asarray(deltas, dtype=np.float64)
    knn = np.asarray(knn, dtype=np.int64)
    n = len(deltas)
    if knn.ndim != 2 or knn.shape[0] != n:
        raise ContractError(f"knn cache shape {knn.shape} does not match {n} displacements")
    k = knn.shape[1]
    if k == 0:
        raise ContractError("rigidity needs non-empty neighbor lists")
    diff = deltas[:, None, :] - deltas[knn]
    norm = _smooth_norm(diff)
    loss = _penalty(diff) / (n * k)
    g = diff / norm[..., None] / (n * k)
    grad = g.sum(axis=1)
    np.add.at(grad, knn.reshape(-1), -g.reshape(-1, 3))
    return loss, grad


def acceleration_loss(deltas: np.ndarray) -> tuple[float, np.ndarray]:
    """Second temporal difference of per-Gaussian displacements, shape ``(T, N, 3)``."""
    deltas = np.asarray(deltas, dtype=np.float64)
    if deltas.ndim != 3 or deltas.shape[0] < 3:
        raise ContractError("acceleration loss needs displacements at >= 3 timesteps")
    second = deltas[:-2] + deltas[2:] - 2.0 * deltas[1:-1]
    norm = _smooth_norm(second)
    count = norm.size
    g = second / norm[..., None] / count
    grad = np.zeros_like(deltas)
    grad[:-2] += g
    grad[2:] += g
    grad[1:-1] -= 2.0 * g
    return _penalty(second) / count, grad


def contact_angles(points, center, other) -> tuple[np.ndarray, np.ndarray]:
    """Per-point contact term ``(c - mu_i) . (mu_j - mu_i)`` and the matched neighbor index."""
    points = np.asarray(points, dtype=np.float64)
    other = np.asarray(other, dtype=np.float64)
    _, nn = cKDTree(other).query(points)
    mu_i = other[nn]
    theta = ((center - mu_i) * (points - mu_i)).sum(axis=1)
    return theta, nn


def _one_sided(a, b, center):
    """Hinge on acute contact angles of ``a`` against ``b``; returns loss, d/da, d/db."""
    derived = center is None
    c = a.mean(axis=0) if derived else np.asarray(center, dtype=np.float64)
    theta, nn = contact_angles(a, c, b)
    active = theta < 0
    n = len(a)
    loss = float(-theta[active].sum() / n) if active.any() else 0.0
    ga = np.zeros_like(a)
    gb = np.zeros_like(b)
    if not active.any():
        return loss, ga, gb
    w = -active.astype(np.float64) / n  # dL/dtheta
    mu_i = b[nn]
    ga += w[:, None] * (c - mu_i)
    np.add.at(gb, nn, w[:, None] * (2.0 * mu_i - a - c))
    if derived:
        ga += (w[:, None] * (a - mu_i)).sum(axis=0) / n
    return loss, ga, gb


def contact_loss(a, b, center_a=None, center_b=None) -> tuple[float, np.ndarray, np.ndarray]:
    """Symmetric contact penalty between two placed clouds.

    Centers default to each cloud's mean (and are then differentiated
    through); explicitly passed centers are treated as constants.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ContractError("contact loss needs non-empty objects")
    l1, ga1, gb1 = _one_sided(a, b, center_a)
    l2, gb2, ga2 = _one_sided(b, a, center_b)
    return l1 + l2, ga1 + ga2, gb1 + gb2


def collides(a, b) -> bool:
    """Contact test: any contact angle obtuse in either direction."""
    loss, _, _ = contact_loss(a, b)
    return loss > 0.0


@dataclass
class RegTerms:
    total: float
    rigidity: float
    acceleration: float
    contact: float


def total_regularization(
    deltas: list[np.ndarray],
    knns: list[np.ndarray],
    placed: list[np.ndarray] | None,
    jacobians: list[np.ndarray] | None,
    weights: RegWeights = RegWeights(),
) -> tuple[RegTerms, list[np.ndarray]]:
    """Weighted sum ``contact + omega1 * acc + omega2 * rigidity`` over a clip.

    ``deltas[o]`` has shape ``(T, N_o, 3)``.  ``placed[o]`` holds the world
    positions ``(T, N_o, 3)`` and ``jacobians[o]`` the ``(T, 3, 3)`` linear
    map from displacement to world position; pass ``None`` to skip contact.
    Rigidity and contact are averaged over timesteps.  Returns the terms and
    the gradient with respect to each ``deltas[o]``.
    """
    grads = [np.zeros_like(d) for d in deltas]
    rig = acc = con = 0.0
    for o, d in enumerate(deltas):
        steps = d.shape[0]
        for t in range(steps):
            value, g = rigidity_loss(d[t], knns[o])
            rig += value / steps
            grads[o][t] += weights.omega2 * g / steps
        if steps >= 3:
            value, g = acceleration_loss(d)
            acc += value
            grads[o] += weights.omega1 * g
    if placed is not None and len(placed) > 1:
        steps = placed[0].shape[0]
        for t in range(steps):
            for a in range(len(placed)):
                for b in range(a + 1, len(placed)):
                    value, ga, gb = contact_loss(placed[a][t], placed[b][t])
                    con += value / steps
                    if value > 0:
                        grads[a][t] += weights.contact * (ga @ jacobians[a][t]) / steps
                        grads[b][t] += weights.contact * (gb @ jacobians[b][t]) / steps
    total = con * weights.contact + weights.omega1 * acc + weights.omega2 * rig
    return RegTerms(total, rig, acc, con), grads
