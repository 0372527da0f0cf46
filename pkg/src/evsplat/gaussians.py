"""Gaussian primitives: activations, covariance assembly, and map-to-cloud construction.

A primitive carries a world position, a unit quaternion, a positive
anisotropic scale, an opacity in (0, 1), and a scalar intensity in [0, 1]
(grayscale rendering uses one intensity instead of view-dependent color).
Per-pixel parameter maps from a regressor are activated (normalize / exp /
sigmoid, then masked) and unprojected into a cloud, one primitive per
foreground pixel.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.special import expit

from .camera import CameraView

_UNIT_TOL = 1e-6
DEFAULT_MASK_THRESHOLD = 0.5


@dataclass(frozen=True)
class GaussianPrimitive:
    mu: np.ndarray
    q: np.ndarray
    s: np.ndarray
    opacity: float
    intensity: float


@dataclass(frozen=True)
class GaussianCloud:
    """Struct-of-arrays cloud: mu (N,3), q (N,4) unit, s (N,3) > 0, opacity in (0,1), intensity in [0,1]."""

    mu: np.ndarray
    q: np.ndarray
    s: np.ndarray
    opacity: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        for name in ("mu", "q", "s", "opacity", "intensity"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
        n = self.mu.shape[0]
        if self.mu.shape != (n, 3) or self.q.shape != (n, 4) or self.s.shape != (n, 3):
            raise ValueError("cloud arrays have inconsistent shapes")
        if self.opacity.shape != (n,) or self.intensity.shape != (n,):
            raise ValueError("cloud arrays have inconsistent shapes")
        _validate_cloud(self)

    def __len__(self) -> int:
        return self.mu.shape[0]

    def __getitem__(self, i: int) -> GaussianPrimitive:
        return GaussianPrimitive(
            self.mu[i].copy(),
            self.q[i].copy(),
            self.s[i].copy(),
            float(self.opacity[i]),
            float(self.intensity[i]),
        )

    @classmethod
    def empty(cls) -> GaussianCloud:
        return cls(np.zeros((0, 3)), np.zeros((0, 4)), np.zeros((0, 3)), np.zeros(0), np.zeros(0))

    @classmethod
    def from_primitives(cls, prims) -> GaussianCloud:
        if not prims:
            return cls.empty()
        return cls(
            np.stack([p.mu for p in prims]),
            np.stack([p.q for p in prims]),
            np.stack([p.s for p in prims]),
            np.array([p.opacity for p in prims]),
            np.array([p.intensity for p in prims]),
        )


def _validate_cloud(cloud: GaussianCloud) -> None:
    if len(cloud) == 0:
        return
    for name in ("mu", "q", "s", "opacity", "intensity"):
        if not np.all(np.isfinite(getattr(cloud, name))):
            raise ValueError(f"cloud field {name} must be finite")
    norms = np.linalg.norm(cloud.q, axis=1)
    if np.max(np.abs(norms - 1.0)) > 1e-9:
        raise ValueError("quaternions must be unit length")
    if np.any(cloud.s <= 0):
        raise ValueError("scales must be positive")
    if np.any(cloud.opacity <= 0) or np.any(cloud.opacity >= 1):
        raise ValueError("opacities must lie strictly in (0, 1)")
    if np.any(cloud.intensity < 0) or np.any(cloud.intensity > 1):
        raise ValueError("intensities must lie in [0, 1]")


def unsafe_cloud(mu, q, s, opacity, intensity) -> GaussianCloud:
    """Build a cloud without invariant checks (finite-difference harnesses only)."""
    cloud = object.__new__(GaussianCloud)
    object.__setattr__(cloud, "mu", np.ascontiguousarray(mu, dtype=np.float64))
    object.__setattr__(cloud, "q", np.ascontiguousarray(q, dtype=np.float64))
    object.__setattr__(cloud, "s", np.ascontiguousarray(s, dtype=np.float64))
    object.__setattr__(cloud, "opacity", np.ascontiguousarray(opacity, dtype=np.float64))
    object.__setattr__(cloud, "intensity", np.ascontiguousarray(intensity, dtype=np.float64))
    return cloud


def quaternions_to_rotations(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for an (N, 4) array of (w, x, y, z) quaternions.

    No normalization is applied; inputs are expected to be unit length.
    """
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3))
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def build_covariance(q: np.ndarray, s: np.ndarray) -> np.ndarray:
    """World-space covariance R(q) diag(s)^2 R(q)^T of one primitive.

    The quaternion must be unit length within 1e-6 (activate first); it is
    renormalized before use so eigenvalues equal the squared scales exactly.
    """
    q = np.asarray(q, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    norm = np.linalg.norm(q)
    if abs(norm - 1.0) > _UNIT_TOL:
        raise ValueError(f"quaternion norm {norm:.8f} deviates from 1 beyond {_UNIT_TOL}")
    if np.any(s <= 0):
        raise ValueError("scales must be positive")
    M = quaternions_to_rotations(q / norm) * s[None, :]
    return M @ M.T


@dataclass(frozen=True)
class ParameterMaps:
    """Per-pixel Gaussian parameter maps plus depth, intensity, and mask.

    raw_rot (H,W,4), raw_scale (H,W,3), raw_opacity (H,W,1) hold regressor
    outputs; after activate_parameter_maps they hold the activated, masked
    values and ``activated`` is set. depth, intensity, mask are (H,W) and
    already live in their final ranges.
    """

    raw_rot: np.ndarray
    raw_scale: np.ndarray
    raw_opacity: np.ndarray
    depth: np.ndarray
    intensity: np.ndarray
    mask: np.ndarray
    activated: bool = False

    def __post_init__(self):
        h, w = self.mask.shape
        if self.raw_rot.shape != (h, w, 4):
            raise ValueError(f"raw_rot must be (H, W, 4), got {self.raw_rot.shape}")
        if self.raw_scale.shape != (h, w, 3):
            raise ValueError(f"raw_scale must be (H, W, 3), got {self.raw_scale.shape}")
        if self.raw_opacity.shape != (h, w, 1):
            raise ValueError(f"raw_opacity must be (H, W, 1), got {self.raw_opacity.shape}")
        if self.depth.shape != (h, w) or self.intensity.shape != (h, w):
            raise ValueError("depth and intensity must match the mask shape")
        for name in ("raw_rot", "raw_scale", "raw_opacity", "depth", "intensity", "mask"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"map {name} must be finite")
        if self.mask.min() < 0 or self.mask.max() > 1:
            raise ValueError("mask values must lie in [0, 1]")

    @property
    def resolution(self) -> tuple[int, int]:
        h, w = self.mask.shape
        return w, h


def activate_parameter_maps(maps: ParameterMaps) -> ParameterMaps:
    """Constrain raw maps to their ranges and multiply each by the mask.

    Quaternions are L2-normalized per pixel (zero-norm inputs become the
    identity quaternion), scales exponentiated, opacities passed through the
    logistic sigmoid; the soft mask then scales all three maps so its
    gradient path survives.
    """
    if maps.activated:
        raise ValueError("maps are already activated")
    norm = np.linalg.norm(maps.raw_rot, axis=-1, keepdims=True)
    rot = np.where(norm > 0, maps.raw_rot / np.where(norm > 0, norm, 1.0), 0.0)
    rot = rot + (norm == 0) * np.array([1.0, 0.0, 0.0, 0.0])
    m = maps.mask[..., None]
    return replace(
        maps,
        raw_rot=rot * m,
        raw_scale=np.exp(maps.raw_scale) * m,
        raw_opacity=expit(maps.raw_opacity) * m,
        activated=True,
    )


def activate_parameter_maps_backward(
    maps: ParameterMaps,
    d_rot: np.ndarray,
    d_scale: np.ndarray,
    d_opacity: np.ndarray,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Adjoint of activate_parameter_maps on the three raw channels.

    ``maps`` is the pre-activation input; the d_* arguments are gradients with
    respect to the activated, masked maps. Zero-norm quaternion pixels get a
    zero gradient (they were replaced by the identity).
    """
    if maps.activated:
        raise ValueError("pass the pre-activation maps")
    m = maps.mask[..., None]

    norm = np.linalg.norm(maps.raw_rot, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    unit = maps.raw_rot / safe
    g = d_rot * m
    dot = np.sum(unit * g, axis=-1, keepdims=True)
    d_raw_rot = np.where(norm > 0, (g - unit * dot) / safe, 0.0)

    d_raw_scale = d_scale * m * np.exp(maps.raw_scale)
    sig = expit(maps.raw_opacity)
    d_raw_opacity = d_opacity * m * sig * (1.0 - sig)
    return d_raw_rot, d_raw_scale, d_raw_opacity


def maps_to_cloud(
    maps: ParameterMaps,
    cam: CameraView,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
) -> GaussianCloud:
    """Unproject every pixel with mask > mask_threshold into one primitive.

    Positions come from lifting (u, v, depth) through the camera pose,
    quaternions are renormalized (mask scaling only changes their norm),
    and primitives are emitted in row-major pixel order.
    """
    if not maps.activated:
        raise ValueError("activate the maps before building a cloud")
    sel_y, sel_x = np.nonzero(maps.mask > mask_threshold)
    if sel_y.size == 0:
        return GaussianCloud.empty()
    depth = maps.depth[sel_y, sel_x]
    bad = depth <= 0
    if np.any(bad):
        i = int(np.argmax(bad))
        raise ValueError(
            f"masked-in pixel (x={int(sel_x[i])}, y={int(sel_y[i])}) has non-positive depth {depth[i]:.6g}"
        )
    xn = (sel_x - cam.cx) / cam.fx
    yn = (sel_y - cam.cy) / cam.fy
    p_cam = np.stack([xn * depth, yn * depth, depth], axis=1)
    mu = p_cam @ cam.P[:3, :3].T + cam.P[:3, 3]

    q_raw = maps.raw_rot[sel_y, sel_x]
    q = q_raw / np.linalg.norm(q_raw, axis=1, keepdims=True)
    return GaussianCloud(
        mu=mu,
        q=q,
        s=maps.raw_scale[sel_y, sel_x],
        opacity=maps.raw_opacity[sel_y, sel_x, 0],
        intensity=maps.intensity[sel_y, sel_x],
    )


@dataclass(frozen=True)
class MapGradients:
    """Gradients on activated maps (rot/scale/opacity) and on depth/intensity."""

    d_rot: np.ndarray
    d_scale: np.ndarray
    d_opacity: np.ndarray
    d_depth: np.ndarray
    d_intensity: np.ndarray


def maps_to_cloud_backward(
    maps: ParameterMaps,
    cam: CameraView,
    grads,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
) -> MapGradients:
    """Scatter per-primitive gradients back onto the activated parameter maps.

    ``grads`` is a rasterizer GradientSet whose rows follow the row-major
    foreground pixel order used by maps_to_cloud.
    """
    if not maps.activated:
        raise ValueError("expects the activated maps that produced the cloud")
    h, w = maps.mask.shape
    sel_y, sel_x = np.nonzero(maps.mask > mask_threshold)
    n = sel_y.size
    if grads.d_mu.shape[0] != n:
        raise ValueError(f"gradient rows ({grads.d_mu.shape[0]}) != foreground pixels ({n})")

    d_rot = np.zeros((h, w, 4))
    d_scale = np.zeros((h, w, 3))
    d_opacity = np.zeros((h, w, 1))
    d_depth = np.zeros((h, w))
    d_intensity = np.zeros((h, w))
    if n == 0:
        return MapGradients(d_rot, d_scale, d_opacity, d_depth, d_intensity)

    q_raw = maps.raw_rot[sel_y, sel_x]
    norm = np.linalg.norm(q_raw, axis=1, keepdims=True)
    unit = q_raw / norm
    dot = np.sum(unit * grads.d_q, axis=1, keepdims=True)
    d_rot[sel_y, sel_x] = (grads.d_q - unit * dot) / norm

    d_scale[sel_y, sel_x] = grads.d_s
    d_opacity[sel_y, sel_x, 0] = grads.d_o
    d_intensity[sel_y, sel_x] = grads.d_intensity

    # mu = P_rot @ ((u-cx)/fx * d, (v-cy)/fy * d, d) + t, linear in depth
    xn = (sel_x - cam.cx) / cam.fx
    yn = (sel_y - cam.cy) / cam.fy
    ray = np.stack([xn, yn, np.ones(n)], axis=1) @ cam.P[:3, :3].T
    d_depth[sel_y, sel_x] = np.sum(grads.d_mu * ray, axis=1)
    return MapGradients(d_rot, d_scale, d_opacity, d_depth, d_intensity)
