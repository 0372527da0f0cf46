"""Tile-based forward splatting of grayscale Gaussians with an analytic backward pass.

Primitives are projected to screen space (2D mean, 2D covariance via the
local affine Jacobian of the pinhole projection), depth-sorted once per
frame, binned to tiles by their 3-sigma screen bounding box, and composited
front to back with alpha blending. The backward pass returns exact gradients
of any image-weighted loss with respect to every primitive parameter.

All results are deterministic: tile outputs are disjoint in the forward
kernel, and the backward kernel accumulates in a fixed serial order.
"""
from __future__ import annotations

from dataclasses import dataclass

import math

import numpy as np

from . import _kernels
from .camera import CameraView, view_transform
from .gaussians import GaussianCloud, GaussianPrimitive, quaternions_to_rotations


@dataclass(frozen=True)
class RasterizerConfig:
    """Rendering constants.

    lowpass is added to the 2D covariance diagonal so every splat covers a
    fraction of a pixel; alpha_max clamps per-sample opacity (hard min, zero
    gradient above); compositing stops once transmittance falls below
    transmittance_min; sigma_cutoff bounds the screen footprint used for
    culling, tiling, and per-pixel contribution.
    """

    tile: int = 16
    lowpass: float = 0.3
    alpha_max: float = 0.99
    transmittance_min: float = 1e-4
    sigma_cutoff: float = 3.0


DEFAULT_CONFIG = RasterizerConfig()


@dataclass(frozen=True)
class Projected2D:
    """Screen-space footprint of one primitive; cov2d includes the low-pass floor."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    opacity: float
    intensity: float
    index: int


@dataclass(frozen=True)
class RenderOutput:
    """Rendered intensity image, final per-pixel transmittance, contributor counts."""

    image: np.ndarray
    transmittance: np.ndarray
    contributors: np.ndarray


@dataclass(frozen=True)
class GradientSet:
    """Per-primitive loss gradients: position, quaternion, scale, opacity, intensity."""

    d_mu: np.ndarray
    d_q: np.ndarray
    d_s: np.ndarray
    d_o: np.ndarray
    d_intensity: np.ndarray

    @classmethod
    def zeros(cls, n: int) -> GradientSet:
        return cls(np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 3)), np.zeros(n), np.zeros(n))


@dataclass(frozen=True)
class _Projection:
    """Visible primitives in front-to-back order plus every projection intermediate."""

    index: np.ndarray
    p_cam: np.ndarray
    rot: np.ndarray
    m_mat: np.ndarray
    sigma: np.ndarray
    jac: np.ndarray
    u_mat: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    mean2d: np.ndarray
    aabb: np.ndarray
    w_rot: np.ndarray

    @property
    def count(self) -> int:
        return self.index.shape[0]


def _project_cloud(cloud: GaussianCloud, cam: CameraView, config: RasterizerConfig) -> _Projection:
    width, height = cam.resolution
    w4 = view_transform(cam)
    w_rot = w4[:3, :3]
    p_cam = cloud.mu @ w_rot.T + w4[:3, 3]
    keep = p_cam[:, 2] > cam.z_near
    index = np.nonzero(keep)[0]

    pc = p_cam[index]
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    rot = quaternions_to_rotations(cloud.q[index])
    m_mat = rot * cloud.s[index][:, None, :]
    sigma = m_mat @ np.transpose(m_mat, (0, 2, 1))

    fx, fy = cam.fx, cam.fy
    n = index.shape[0]
    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = fx / z
    jac[:, 0, 2] = -fx * x / (z * z)
    jac[:, 1, 1] = fy / z
    jac[:, 1, 2] = -fy * y / (z * z)
    u_mat = jac @ w_rot
    cov_full = u_mat @ sigma @ np.transpose(u_mat, (0, 2, 1))
    cov_a = cov_full[:, 0, 0] + config.lowpass
    cov_b = cov_full[:, 0, 1]
    cov_c = cov_full[:, 1, 1] + config.lowpass
    cov2d = np.stack([cov_a, cov_b, cov_c], axis=1)

    det = cov_a * cov_c - cov_b * cov_b
    conic = np.stack([cov_c / det, -cov_b / det, cov_a / det], axis=1)
    mean2d = np.stack([fx * x / z + cam.cx, fy * y / z + cam.cy], axis=1)

    rx = config.sigma_cutoff * np.sqrt(cov_a)
    ry = config.sigma_cutoff * np.sqrt(cov_c)
    x0 = np.maximum(np.ceil(mean2d[:, 0] - rx), 0).astype(np.int64)
    x1 = np.minimum(np.floor(mean2d[:, 0] + rx), width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(mean2d[:, 1] - ry), 0).astype(np.int64)
    y1 = np.minimum(np.floor(mean2d[:, 1] + ry), height - 1).astype(np.int64)
    vis = (x0 <= x1) & (y0 <= y1)

    order = np.argsort(z[vis], kind="stable")
    sel = np.nonzero(vis)[0][order]
    return _Projection(
        index=index[sel],
        p_cam=pc[sel],
        rot=rot[sel],
        m_mat=m_mat[sel],
        sigma=sigma[sel],
        jac=jac[sel],
        u_mat=u_mat[sel],
        cov2d=cov2d[sel],
        conic=conic[sel],
        mean2d=mean2d[sel],
        aabb=np.stack([x0[sel], x1[sel], y0[sel], y1[sel]], axis=1),
        w_rot=w_rot,
    )


def _bin_tiles(proj: _Projection, cam: CameraView, config: RasterizerConfig):
    """CSR tile lists: items keep the global depth order inside each tile."""
    width, height = cam.resolution
    tile = config.tile
    n_tx = (width + tile - 1) // tile
    n_ty = (height + tile - 1) // tile
    n_tiles = n_tx * n_ty
    if proj.count == 0:
        return np.zeros(n_tiles + 1, np.int64), np.zeros(0, np.int64), n_tx

    tx0 = proj.aabb[:, 0] // tile
    tx1 = proj.aabb[:, 1] // tile
    ty0 = proj.aabb[:, 2] // tile
    ty1 = proj.aabb[:, 3] // tile
    per_x = tx1 - tx0 + 1
    per_y = ty1 - ty0 + 1
    counts = per_x * per_y
    total = int(counts.sum())

    pid = np.repeat(np.arange(proj.count, dtype=np.int64), counts)
    first = np.concatenate([[0], np.cumsum(counts)[:-1]])
    k = np.arange(total, dtype=np.int64) - np.repeat(first, counts)
    tx = tx0[pid] + k % per_x[pid]
    ty = ty0[pid] + k // per_x[pid]
    tile_id = ty * n_tx + tx

    order = np.argsort(tile_id, kind="stable")
    items = pid[order]
    starts = np.zeros(n_tiles + 1, np.int64)
    starts[1:] = np.cumsum(np.bincount(tile_id, minlength=n_tiles))
    return starts, items, n_tx


def _check_render_args(cam: CameraView, background: float) -> None:
    if not 0.0 <= background <= 1.0:
        raise ValueError(f"background intensity must lie in [0, 1], got {background}")


def render_forward(
    cloud: GaussianCloud,
    cam: CameraView,
    background: float = 0.0,
    config: RasterizerConfig = DEFAULT_CONFIG,
) -> RenderOutput:
    """Render a cloud with the tile-based schedule."""
    _check_render_args(cam, background)
    width, height = cam.resolution
    image = np.empty((height, width))
    transmit = np.empty((height, width))
    ncontrib = np.empty((height, width), np.int32)
    proj = _project_cloud(cloud, cam, config)
    starts, items, n_tx = _bin_tiles(proj, cam, config)
    _kernels.forward_tile(
        image,
        transmit,
        ncontrib,
        starts,
        items,
        proj.mean2d,
        proj.conic,
        cloud.opacity[proj.index],
        cloud.intensity[proj.index],
        proj.aabb,
        float(background),
        config.alpha_max,
        config.transmittance_min,
        config.tile,
        n_tx,
    )
    return RenderOutput(image, transmit, ncontrib)


def render_forward_naive(
    cloud: GaussianCloud,
    cam: CameraView,
    background: float = 0.0,
    config: RasterizerConfig = DEFAULT_CONFIG,
) -> RenderOutput:
    """Render with the full-sort per-pixel schedule (reference for the tile path)."""
    _check_render_args(cam, background)
    width, height = cam.resolution
    image = np.empty((height, width))
    transmit = np.empty((height, width))
    ncontrib = np.empty((height, width), np.int32)
    proj = _project_cloud(cloud, cam, config)
    _kernels.forward_naive(
        image,
        transmit,
        ncontrib,
        proj.mean2d,
        proj.conic,
        cloud.opacity[proj.index],
        cloud.intensity[proj.index],
        proj.aabb,
        float(background),
        config.alpha_max,
        config.transmittance_min,
    )
    return RenderOutput(image, transmit, ncontrib)


def render_backward(
    cloud: GaussianCloud,
    cam: CameraView,
    background: float,
    dl_dimage: np.ndarray,
    config: RasterizerConfig = DEFAULT_CONFIG,
) -> GradientSet:
    """Exact gradients of sum(dl_dimage * image) for every primitive parameter.

    The screen-space pass replays compositing per pixel; the chain back to
    3D parameters runs vectorized over primitives. Primitives that were
    culled or never composited receive exactly zero gradient.
    """
    _check_render_args(cam, background)
    width, height = cam.resolution
    if dl_dimage.shape != (height, width):
        raise ValueError(f"dl_dimage must be (H, W) = {(height, width)}, got {dl_dimage.shape}")
    grads = GradientSet.zeros(len(cloud))
    proj = _project_cloud(cloud, cam, config)
    m = proj.count
    if m == 0:
        return grads
    starts, items, n_tx = _bin_tiles(proj, cam, config)

    d_mean2d = np.zeros((m, 2))
    d_conic = np.zeros((m, 3))
    d_opacity = np.zeros(m)
    d_intensity = np.zeros(m)
    _kernels.backward_tile(
        np.ascontiguousarray(dl_dimage, dtype=np.float64),
        starts,
        items,
        proj.mean2d,
        proj.conic,
        cloud.opacity[proj.index],
        cloud.intensity[proj.index],
        proj.aabb,
        float(background),
        config.alpha_max,
        config.transmittance_min,
        config.tile,
        n_tx,
        height,
        width,
        d_mean2d,
        d_conic,
        d_opacity,
        d_intensity,
    )

    d_mu, d_q, d_s = _chain_screen_gradients(cloud, cam, proj, d_mean2d, d_conic)
    grads.d_mu[proj.index] = d_mu
    grads.d_q[proj.index] = d_q
    grads.d_s[proj.index] = d_s
    grads.d_o[proj.index] = d_opacity
    grads.d_intensity[proj.index] = d_intensity
    return grads


def _chain_screen_gradients(cloud, cam, proj: _Projection, d_mean2d, d_conic):
    """Chain d(mean2d)/d(conic) gradients through projection to mu, q, s."""
    fx, fy = cam.fx, cam.fy
    pc = proj.p_cam
    x, y, z = pc[:, 0], pc[:, 1], pc[:, 2]
    zi = 1.0 / z

    a, b, c = proj.conic[:, 0], proj.conic[:, 1], proj.conic[:, 2]
    con = np.empty((proj.count, 2, 2))
    con[:, 0, 0] = a
    con[:, 0, 1] = b
    con[:, 1, 0] = b
    con[:, 1, 1] = c
    g_con = np.empty_like(con)
    g_con[:, 0, 0] = d_conic[:, 0]
    g_con[:, 0, 1] = 0.5 * d_conic[:, 1]
    g_con[:, 1, 0] = 0.5 * d_conic[:, 1]
    g_con[:, 1, 1] = d_conic[:, 2]

    # conic = inv(cov2d); the low-pass floor is an additive constant
    g_cov = -con @ g_con @ con
    g_sigma = np.einsum("nji,njk,nkl->nil", proj.u_mat, g_cov, proj.u_mat)
    d_u = 2.0 * (g_cov @ proj.u_mat @ proj.sigma)
    d_jac = np.einsum("nij,kj->nik", d_u, proj.w_rot)

    d_m = 2.0 * (g_sigma @ proj.m_mat)
    d_s = np.einsum("nik,nik->nk", d_m, proj.rot)
    d_rot = d_m * cloud.s[proj.index][:, None, :]

    qn = cloud.q[proj.index]
    qw, qx, qy, qz = qn[:, 0], qn[:, 1], qn[:, 2], qn[:, 3]
    g = d_rot
    d_q = np.stack(
        [
            2 * (-qz * g[:, 0, 1] + qy * g[:, 0, 2] + qz * g[:, 1, 0] - qx * g[:, 1, 2] - qy * g[:, 2, 0] + qx * g[:, 2, 1]),
            2 * (qy * g[:, 0, 1] + qz * g[:, 0, 2] + qy * g[:, 1, 0] - 2 * qx * g[:, 1, 1] - qw * g[:, 1, 2] + qz * g[:, 2, 0] + qw * g[:, 2, 1] - 2 * qx * g[:, 2, 2]),
            2 * (-2 * qy * g[:, 0, 0] + qx * g[:, 0, 1] + qw * g[:, 0, 2] + qx * g[:, 1, 0] + qz * g[:, 1, 2] - qw * g[:, 2, 0] + qz * g[:, 2, 1] - 2 * qy * g[:, 2, 2]),
            2 * (-2 * qz * g[:, 0, 0] - qw * g[:, 0, 1] + qx * g[:, 0, 2] + qw * g[:, 1, 0] - 2 * qz * g[:, 1, 1] + qy * g[:, 1, 2] + qx * g[:, 2, 0] + qy * g[:, 2, 1]),
        ],
        axis=1,
    )

    gmu = d_mean2d[:, 0]
    gmv = d_mean2d[:, 1]
    fxz2 = fx * zi * zi
    fyz2 = fy * zi * zi
    d_pc = np.stack(
        [
            gmu * fx * zi - d_jac[:, 0, 2] * fxz2,
            gmv * fy * zi - d_jac[:, 1, 2] * fyz2,
            -gmu * fx * x * zi * zi
            - gmv * fy * y * zi * zi
            - d_jac[:, 0, 0] * fxz2
            - d_jac[:, 1, 1] * fyz2
            + d_jac[:, 0, 2] * 2 * fx * x * zi * zi * zi
            + d_jac[:, 1, 2] * 2 * fy * y * zi * zi * zi,
        ],
        axis=1,
    )
    d_mu = d_pc @ proj.w_rot
    return d_mu, d_q, d_s


def project_gaussian_2d(
    g: GaussianPrimitive,
    cam: CameraView,
    config: RasterizerConfig = DEFAULT_CONFIG,
) -> Projected2D | None:
    """Project one primitive to screen space; None when culled.

    Culling happens behind the near plane or when the sigma_cutoff screen
    ellipse misses every pixel center.
    """
    cloud = GaussianCloud.from_primitives([g])
    proj = _project_cloud(cloud, cam, config)
    if proj.count == 0:
        return None
    cov = np.array(
        [
            [proj.cov2d[0, 0], proj.cov2d[0, 1]],
            [proj.cov2d[0, 1], proj.cov2d[0, 2]],
        ]
    )
    return Projected2D(
        mean2d=proj.mean2d[0].copy(),
        cov2d=cov,
        depth=float(proj.p_cam[0, 2]),
        opacity=float(g.opacity),
        intensity=float(g.intensity),
        index=0,
    )


def evaluate_alpha(proj: Projected2D, pixel: np.ndarray, alpha_max: float = DEFAULT_CONFIG.alpha_max) -> float:
    """Sample opacity of a projected primitive at a pixel position.

    alpha = min(o * exp(-0.5 * d^2), alpha_max) with d the Mahalanobis
    distance under the 2D covariance.
    """
    cov = proj.cov2d
    det = cov[0, 0] * cov[1, 1] - cov[0, 1] * cov[1, 0]
    if not np.isfinite(det) or det <= 0:
        raise ValueError("singular 2D covariance")
    dx = pixel[0] - proj.mean2d[0]
    dy = pixel[1] - proj.mean2d[1]
    d2 = (cov[1, 1] * dx * dx - 2.0 * cov[0, 1] * dx * dy + cov[0, 0] * dy * dy) / det
    return min(proj.opacity * math.exp(-0.5 * d2), alpha_max)
