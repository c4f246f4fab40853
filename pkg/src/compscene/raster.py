"""Software Gaussian splatting: projection, tiled alpha compositing, backward.

The tiled compositor evaluates every pixel of a tile (8x8 by default) against the
depth-sorted splats binned to that tile.  Transmittance and color are
accumulated with ``cumprod``/``cumsum`` so the per-pixel reduction order is
exactly the sequential front-to-back order of :func:`composite_per_pixel`,
which is kept as the reference implementation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from PIL import Image

from .scene import Camera, Gaussian3D, covariances

MIN_SIGMA = 1.0 / 255.0
MIN_TRANSMITTANCE = 1e-4
LOW_PASS = 0.3
CULL_MARGIN = 1.3
TILE = 8


@dataclass(frozen=True)
class Splat2D:
    pixel_center: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    color: np.ndarray
    key: int = 0


@dataclass
class SplatBatch:
    """Struct-of-arrays form of a splat list.

    ``keys`` identify splats for the depth tie-break; ``source`` maps each
    splat back to the row of the Gaussian array it was projected from.
    """

    means: np.ndarray  # (M, 2)
    covs: np.ndarray  # (M, 2, 2)
    depths: np.ndarray  # (M,)
    opacities: np.ndarray  # (M,)
    colors: np.ndarray  # (M, 3)
    keys: np.ndarray  # (M,) int64
    source: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.depths)

    @property
    def conics(self) -> np.ndarray:
        """Inverse covariances packed as (a, b, c) for ``[[a, b], [b, c]]``."""
        a, b, c = self.covs[:, 0, 0], self.covs[:, 0, 1], self.covs[:, 1, 1]
        det = a * c - b * b
        return np.stack([c / det, -b / det, a / det], axis=1)

    @classmethod
    def from_splats(cls, splats: Sequence[Splat2D]) -> "SplatBatch":
        if not splats:
            return cls.empty()
        return cls(
            np.array([s.pixel_center for s in splats], dtype=np.float64).reshape(-1, 2),
            np.array([s.cov2d for s in splats], dtype=np.float64).reshape(-1, 2, 2),
            np.array([s.depth for s in splats], dtype=np.float64),
            np.array([s.opacity for s in splats], dtype=np.float64),
            np.array([s.color for s in splats], dtype=np.float64).reshape(-1, 3),
            np.array([s.key for s in splats], dtype=np.int64),
        )

    @classmethod
    def empty(cls) -> "SplatBatch":
        return cls(np.zeros((0, 2)), np.zeros((0, 2, 2)), np.zeros(0), np.zeros(0), np.zeros((0, 3)),
                   np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64))

    def splat(self, i: int) -> Splat2D:
        return Splat2D(self.means[i], self.covs[i], float(self.depths[i]), float(self.opacities[i]),
                       self.colors[i], int(self.keys[i]))

    @staticmethod
    def concat(batches: Sequence["SplatBatch"]) -> "SplatBatch":
        batches = [b for b in batches if len(b)]
        if not batches:
            return SplatBatch.empty()
        src = [b.source if b.source is not None else np.zeros(len(b), np.int64) for b in batches]
        return SplatBatch(
            np.concatenate([b.means for b in batches]),
            np.concatenate([b.covs for b in batches]),
            np.concatenate([b.depths for b in batches]),
            np.concatenate([b.opacities for b in batches]),
            np.concatenate([b.colors for b in batches]),
            np.concatenate([b.keys for b in batches]),
            np.concatenate(src),
        )


@dataclass
class RenderOutput:
    image: np.ndarray  # (H, W, 3)
    alpha_map: np.ndarray  # (H, W)


# ---------------------------------------------------------------------------
# projection


@dataclass
class Projection:
    """Projected splats plus what the backward pass needs from projection."""

    batch: SplatBatch
    visible: np.ndarray  # indices of input Gaussians that survived culling
    camera_points: np.ndarray  # (M, 3) camera-space centers of visible Gaussians
    camera_covs: np.ndarray | None = None  # (M, 3, 3) covariances in camera axes


def project_arrays(
    centers, scales, rotations, opacities, colors, cam: Camera, keys=None, cov_rotation=None
) -> Projection:
    """Project Gaussians given as arrays.

    ``cov_rotation`` is an extra world rotation applied to every covariance
    (objects rotated along their trajectory).
    """
    centers = np.asarray(centers, dtype=np.float64)
    n = len(centers)
    keys = np.arange(n, dtype=np.int64) if keys is None else np.asarray(keys, dtype=np.int64)
    w2c = cam.rotation
    pc = (centers - cam.position) @ w2c.T
    z = pc[:, 2]
    f = cam.focal
    cx, cy = cam.principal_point
    with np.errstate(divide="ignore", invalid="ignore"):
        u = f * pc[:, 0] / z + cx
        v = f * pc[:, 1] / z + cy
    keep = (z > cam.near) & (z < cam.far)
    keep &= np.abs(u - cx) <= CULL_MARGIN * 0.5 * cam.image_width
    keep &= np.abs(v - cy) <= CULL_MARGIN * 0.5 * cam.image_height
    idx = np.nonzero(keep)[0]
    pc, z = pc[idx], z[idx]

    jac = np.zeros((len(idx), 2, 3))
    jac[:, 0, 0] = f / z
    jac[:, 0, 2] = -f * pc[:, 0] / (z * z)
    jac[:, 1, 1] = f / z
    jac[:, 1, 2] = -f * pc[:, 1] / (z * z)
    cov3 = covariances(np.asarray(scales)[idx], np.asarray(rotations)[idx])
    if cov_rotation is not None:
        cov3 = cov_rotation @ cov3 @ cov_rotation.T
    cov_cam = w2c @ cov3 @ w2c.T
    cov2 = jac @ cov_cam @ np.swapaxes(jac, 1, 2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))
    cov2[:, 0, 0] += LOW_PASS
    cov2[:, 1, 1] += LOW_PASS

    batch = SplatBatch(
        np.stack([u[idx], v[idx]], axis=1),
        cov2,
        z.copy(),
        np.asarray(opacities, dtype=np.float64)[idx],
        np.asarray(colors, dtype=np.float64)[idx],
        keys[idx],
        idx,
    )
    return Projection(batch, idx, pc, cov_cam)


def project(g: Gaussian3D, cam: Camera, key: int = 0) -> Splat2D | None:
    """Project one Gaussian; ``None`` when culled."""
    proj = project_arrays(g.center[None], g.scale[None], g.rotation[None], [g.opacity], g.color[None], cam, [key])
    if not len(proj.batch):
        return None
    return proj.batch.splat(0)


def project_backward(proj: Projection, cam: Camera, grad_means: np.ndarray,
                     grad_covs: np.ndarray | None = None) -> np.ndarray:
    """Map d/d(pixel center) and d/d(cov2d) to d/d(world center) for the visible Gaussians.

    The 2D covariance depends on the center through the projection
    Jacobian; that path is included when ``grad_covs`` is given.
    """
    pc = proj.camera_points
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    f = cam.focal
    gx, gy = grad_means[:, 0], grad_means[:, 1]
    g_cam = np.stack([gx * f / z, gy * f / z, -(gx * f * x + gy * f * y) / (z * z)], axis=1)
    if grad_covs is not None and len(pc):
        jac = np.zeros((len(pc), 2, 3))
        jac[:, 0, 0] = f / z
        jac[:, 0, 2] = -f * x / (z * z)
        jac[:, 1, 1] = f / z
        jac[:, 1, 2] = -f * y / (z * z)
        gsym = 0.5 * (grad_covs + np.swapaxes(grad_covs, 1, 2))
        g_jac = 2.0 * gsym @ jac @ proj.camera_covs  # (M, 2, 3)
        z2, z3 = z * z, z * z * z
        g_cam[:, 0] += g_jac[:, 0, 2] * (-f / z2)
        g_cam[:, 1] += g_jac[:, 1, 2] * (-f / z2)
        g_cam[:, 2] += (g_jac[:, 0, 0] + g_jac[:, 1, 1]) * (-f / z2)
        g_cam[:, 2] += g_jac[:, 0, 2] * (2 * f * x / z3) + g_jac[:, 1, 2] * (2 * f * y / z3)
    return g_cam @ cam.rotation


# ---------------------------------------------------------------------------
# compositing


def _power(px, py, mx, my, ca, cb, cc):
    dx = px - mx
    dy = py - my
    return -0.5 * (ca * dx * dx + cc * dy * dy) - cb * dx * dy


def _sigma(px, py, mx, my, ca, cb, cc, op):
    g = np.exp(_power(px, py, mx, my, ca, cb, cc))
    return op * g, g


def depth_order(batch: SplatBatch) -> np.ndarray:
    """Front-to-back order: camera depth, ties by key."""
    return np.lexsort((batch.keys, batch.depths))


def _tile_bins(batch: SplatBatch, order: np.ndarray, height: int, width: int, tile: int, min_sigma: float):
    """Assign depth-ranked splats to tiles.

    Returns a list, per tile, of splat indices in front-to-back order.  A
    splat is binned to every tile whose pixels might see sigma >= min_sigma.
    """
    ntx = -(-width // tile)
    nty = -(-height // tile)
    m = len(batch)
    if m == 0:
        return [np.zeros(0, np.int64)] * (ntx * nty), ntx, nty
    op = batch.opacities
    if min_sigma > 0:
        with np.errstate(divide="ignore"):
            q = 2.0 * np.log(np.where(op > 0, op, 1e-300) / min_sigma)
        q = np.where(op >= min_sigma, q, -1.0)
    else:
        q = np.full(m, np.inf)
    live = q >= 0
    q = np.maximum(q, 0.0) * 1.0001 + 1e-9
    with np.errstate(invalid="ignore"):
        rx = np.sqrt(q * batch.covs[:, 0, 0]) * (1 + 1e-9) + 1e-6
        ry = np.sqrt(q * batch.covs[:, 1, 1]) * (1 + 1e-9) + 1e-6
    big = 1e9
    x0 = np.clip(np.floor(batch.means[:, 0] - rx - 0.5), -1, big)
    x1 = np.clip(np.ceil(batch.means[:, 0] + rx - 0.5), -1, big)
    y0 = np.clip(np.floor(batch.means[:, 1] - ry - 0.5), -1, big)
    y1 = np.clip(np.ceil(batch.means[:, 1] + ry - 0.5), -1, big)
    tx0 = np.clip(np.floor(x0 / tile), 0, ntx - 1).astype(np.int64)
    tx1 = np.clip(np.floor(x1 / tile), 0, ntx - 1).astype(np.int64)
    ty0 = np.clip(np.floor(y0 / tile), 0, nty - 1).astype(np.int64)
    ty1 = np.clip(np.floor(y1 / tile), 0, nty - 1).astype(np.int64)
    live &= (x1 >= 0) & (x0 <= width - 1) & (y1 >= 0) & (y0 <= height - 1)

    rank = np.empty(m, np.int64)
    rank[order] = np.arange(m)
    ids = np.nonzero(live)[0]
    nx = tx1[ids] - tx0[ids] + 1
    ny = ty1[ids] - ty0[ids] + 1
    counts = nx * ny
    total = int(counts.sum())
    splat = np.repeat(ids, counts)
    start = np.repeat(np.cumsum(counts) - counts, counts)
    local = np.arange(total) - start
    nxr = np.repeat(nx, counts)
    tx = np.repeat(tx0[ids], counts) + local % nxr
    ty = np.repeat(ty0[ids], counts) + local // nxr
    tile_id = ty * ntx + tx
    srt = np.lexsort((rank[splat], tile_id))
    tile_id, splat = tile_id[srt], splat[srt]
    bounds = np.searchsorted(tile_id, np.arange(ntx * nty + 1))
    bins = [splat[bounds[i] : bounds[i + 1]] for i in range(ntx * nty)]
    return bins, ntx, nty


@dataclass
class RasterContext:
    """Inputs needed to replay the forward pass in :func:`rasterize_backward`."""

    batch: SplatBatch
    height: int
    width: int
    background: np.ndarray
    tile: int
    min_sigma: float
    min_transmittance: float
    bins: list
    ntx: int


def _tile_pixels(tx, ty, tile, height, width):
    xs = np.arange(tx * tile, min((tx + 1) * tile, width))
    ys = np.arange(ty * tile, min((ty + 1) * tile, height))
    py, px = np.meshgrid(ys + 0.5, xs + 0.5, indexing="ij")
    return xs, ys, px.reshape(-1, 1), py.reshape(-1, 1)


def _tile_forward(batch, conics, sel, px, py, min_sigma, min_t):
    m = batch.means[sel]
    sig, g = _sigma(px, py, m[:, 0], m[:, 1], conics[sel, 0], conics[sel, 1], conics[sel, 2], batch.opacities[sel])
    keep = sig >= min_sigma
    f = np.where(keep, 1.0 - sig, 1.0)
    tc = np.cumprod(f, axis=1)
    t_before = np.empty_like(tc)
    t_before[:, 0] = 1.0
    t_before[:, 1:] = tc[:, :-1]
    mask = keep & (t_before >= min_t)
    w = np.where(mask, sig * t_before, 0.0)
    t_final = np.cumprod(np.where(mask, f, 1.0), axis=1)[:, -1]
    return sig, g, f, t_before, mask, w, t_final


def rasterize(
    batch: SplatBatch,
    height: int,
    width: int,
    background=None,
    *,
    tile: int = TILE,
    min_sigma: float = MIN_SIGMA,
    min_transmittance: float = MIN_TRANSMITTANCE,
) -> tuple[RenderOutput, RasterContext]:
    bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    image = np.empty((height, width, 3))
    alpha = np.empty((height, width))
    order = depth_order(batch)
    bins, ntx, nty = _tile_bins(batch, order, height, width, tile, min_sigma)
    conics = batch.conics if len(batch) else np.zeros((0, 3))
    for ti, sel in enumerate(bins):
        tx, ty = ti % ntx, ti // ntx
        xs, ys, px, py = _tile_pixels(tx, ty, tile, height, width)
        shape = (len(ys), len(xs))
        if len(sel) == 0:
            image[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1] = bg
            alpha[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1] = 0.0
            continue
        _, _, _, _, _, w, t_final = _tile_forward(batch, conics, sel, px, py, min_sigma, min_transmittance)
        col = np.empty((len(px), 3))
        for ch in range(3):
            col[:, ch] = np.cumsum(w * batch.colors[sel, ch], axis=1)[:, -1] + t_final * bg[ch]
        image[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1] = col.reshape(*shape, 3)
        alpha[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1] = (1.0 - t_final).reshape(shape)
    ctx = RasterContext(batch, height, width, bg, tile, min_sigma, min_transmittance, bins, ntx)
    return RenderOutput(image, alpha), ctx


def composite(
    splats: SplatBatch | Sequence[Splat2D],
    cam: Camera,
    background=None,
    **kwargs,
) -> RenderOutput:
    """Alpha-blend splats front to back into an image of ``cam``'s size."""
    if not isinstance(splats, SplatBatch):
        splats = SplatBatch.from_splats(list(splats))
    out, _ = rasterize(splats, cam.image_height, cam.image_width, background, **kwargs)
    return out


def composite_per_pixel(
    splats: SplatBatch | Sequence[Splat2D],
    cam: Camera,
    background=None,
    *,
    min_sigma: float = MIN_SIGMA,
    min_transmittance: float = MIN_TRANSMITTANCE,
) -> RenderOutput:
    """Reference compositor: every pixel walks every sorted splat sequentially."""
    batch = splats if isinstance(splats, SplatBatch) else SplatBatch.from_splats(list(splats))
    bg = np.zeros(3) if background is None else np.asarray(background, dtype=np.float64)
    h, w = cam.image_height, cam.image_width
    image = np.empty((h, w, 3))
    alpha = np.empty((h, w))
    order = depth_order(batch)
    m = batch.means[order]
    con = batch.conics[order] if len(batch) else np.zeros((0, 3))
    op = batch.opacities[order]
    colors = batch.colors[order].tolist()
    for y in range(h):
        for x in range(w):
            px = np.array([[x + 0.5]])
            py = np.array([[y + 0.5]])
            sig = _sigma(px, py, m[:, 0], m[:, 1], con[:, 0], con[:, 1], con[:, 2], op)[0][0].tolist()
            t = 1.0
            r = g = b = 0.0
            for i, s in enumerate(sig):
                if s < min_sigma:
                    continue
                wt = s * t
                c = colors[i]
                r += wt * c[0]
                g += wt * c[1]
                b += wt * c[2]
                t = t * (1.0 - s)
                if t < min_transmittance:
                    break
            image[y, x] = (r + t * bg[0], g + t * bg[1], b + t * bg[2])
            alpha[y, x] = 1.0 - t
    return RenderOutput(image, alpha)


@dataclass
class SplatGrads:
    means: np.ndarray  # (M, 2)
    opacities: np.ndarray  # (M,)
    colors: np.ndarray  # (M, 3)
    covs: np.ndarray  # (M, 2, 2)


def rasterize_backward(ctx: RasterContext, grad_image: np.ndarray) -> SplatGrads:
    """Gradients of ``sum(grad_image * image)`` w.r.t. splat centers, covariances, opacities, colors.

    The sort order of the forward pass is held fixed.
    """
    batch = ctx.batch
    m_all = len(batch)
    gm = np.zeros((m_all, 2))
    go = np.zeros(m_all)
    gc = np.zeros((m_all, 3))
    gcov = np.zeros((m_all, 2, 2))
    if m_all == 0:
        return SplatGrads(gm, go, gc, gcov)
    conics = batch.conics
    bg = ctx.background
    for ti, sel in enumerate(ctx.bins):
        if len(sel) == 0:
            continue
        tx, ty = ti % ctx.ntx, ti // ctx.ntx
        xs, ys, px, py = _tile_pixels(tx, ty, ctx.tile, ctx.height, ctx.width)
        gimg = grad_image[ys[0] : ys[-1] + 1, xs[0] : xs[-1] + 1].reshape(-1, 3)
        sig, g, f, t_before, mask, w, t_final = _tile_forward(
            batch, conics, sel, px, py, ctx.min_sigma, ctx.min_transmittance
        )
        col = batch.colors[sel]
        t_next = np.where(mask, t_before * f, 0.0)
        dsig = np.zeros_like(sig)
        for ch in range(3):
            cw = w * col[:, ch]
            # color seen behind each splat: suffix sum plus background
            suffix = np.cumsum(cw[:, ::-1], axis=1)[:, ::-1] - cw + (t_final * bg[ch])[:, None]
            with np.errstate(divide="ignore", invalid="ignore"):
                behind = np.where(t_next > 0, suffix / np.where(t_next > 0, t_next, 1.0), bg[ch])
            dsig += gimg[:, ch : ch + 1] * np.where(mask, t_before * (col[:, ch] - behind), 0.0)
            gc[sel, ch] += (gimg[:, ch : ch + 1] * w).sum(axis=0)
        go[sel] += (dsig * g).sum(axis=0)
        # d sigma / d mean = sigma * Q (p - mean)
        dx = px - batch.means[sel, 0]
        dy = py - batch.means[sel, 1]
        ds = dsig * np.where(mask, sig, 0.0)
        qx = conics[sel, 0] * dx + conics[sel, 1] * dy
        qy = conics[sel, 1] * dx + conics[sel, 2] * dy
        gm[sel, 0] += (ds * qx).sum(axis=0)
        gm[sel, 1] += (ds * qy).sum(axis=0)
        # d sigma / d cov2d = sigma/2 (Q d)(Q d)^T
        gcov[sel, 0, 0] += 0.5 * (ds * qx * qx).sum(axis=0)
        off = 0.5 * (ds * qx * qy).sum(axis=0)
        gcov[sel, 0, 1] += off
        gcov[sel, 1, 0] += off
        gcov[sel, 1, 1] += 0.5 * (ds * qy * qy).sum(axis=0)
    return SplatGrads(gm, go, gc, gcov)


# ---------------------------------------------------------------------------
# export


def to_png(output: RenderOutput, path, *, with_alpha: bool = False) -> None:
    rgb = np.clip(np.round(output.image * 255.0), 0, 255).astype(np.uint8)
    if with_alpha:
        a = np.clip(np.round(output.alpha_map * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(np.dstack([rgb, a]), mode="RGBA").save(path)
    else:
        Image.fromarray(rgb, mode="RGB").save(path)
