"""Deterministic synthetic scenes for tests, demos, and desk-scale experiments.

Scenes are textured spheres observed by an orbiting camera with analytic
depth, silhouette, and view-independent albedo, plus an event stream
simulated between consecutive frames. Frames and depths are quantized
exactly as the on-disk formats store them, so in-memory bundles match their
saved counterparts.
"""
from __future__ import annotations

import numpy as np

from .camera import CameraView
from .events import (
    DEFAULT_THRESHOLD,
    EventStream,
    SimulatorState,
    concatenate_streams,
    simulate_events,
)
from .gaussians import GaussianCloud
from .io import SceneBundle, SceneMeta, SceneView
from .pipeline import DEFAULT_D_MAX

FRAME_DT_NS = 10_000_000
LOG_EPS = 1e-2


def look_at_pose(eye: np.ndarray, target: np.ndarray) -> np.ndarray:
    """Camera-to-world pose looking from eye toward target (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    world_down = np.array([0.0, 1.0, 0.0])
    right = np.cross(world_down, fwd)
    nr = np.linalg.norm(right)
    if nr < 1e-12:
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    down = np.cross(fwd, right)
    pose = np.eye(4)
    pose[:3, 0] = right
    pose[:3, 1] = down
    pose[:3, 2] = fwd
    pose[:3, 3] = eye
    return pose


def _sphere_view(cam: CameraView, center: np.ndarray, radius: float, freq: np.ndarray, phase: np.ndarray):
    """Analytic depth, mask, and albedo for a textured sphere."""
    w, h = cam.resolution
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    xn = (u - cam.cx) / cam.fx
    yn = (v - cam.cy) / cam.fy
    dirs_cam = np.stack([xn, yn, np.ones_like(xn)], axis=-1)
    dirs = dirs_cam @ cam.P[:3, :3].T
    eye = cam.P[:3, 3]
    oc = eye - center

    a = np.sum(dirs * dirs, axis=-1)
    b = 2.0 * (dirs @ oc)
    c = float(oc @ oc) - radius * radius
    disc = b * b - 4.0 * a * c
    hit = disc >= 0
    sq = np.sqrt(np.where(hit, disc, 0.0))
    z = np.where(hit, (-b - sq) / (2.0 * a), 0.0)
    hit &= z > cam.z_near
    depth = np.where(hit, z, 0.0)

    p = eye + dirs * depth[..., None]
    tex = (
        np.sin(freq[0] * p[..., 0] + phase[0])
        * np.sin(freq[1] * p[..., 1] + phase[1])
        * np.cos(freq[2] * p[..., 2] + phase[2])
    )
    albedo = np.where(hit, 0.5 + 0.4 * tex, 0.0)
    return depth, hit.astype(np.float64), albedo


def make_sphere_scene(
    variant: int = 0,
    n_views: int = 4,
    resolution: tuple[int, int] = (32, 32),
    threshold: float = DEFAULT_THRESHOLD,
    d_max: float = DEFAULT_D_MAX,
) -> SceneBundle:
    """One of a family of sphere scenes; the variant picks size, offset, and texture."""
    w, h = resolution
    fx = fy = 1.1 * w
    cx, cy = (w - 1) / 2.0, (h - 1) / 2.0
    meta = SceneMeta(
        width=w,
        height=h,
        fx=fx,
        fy=fy,
        cx=cx,
        cy=cy,
        z_near=0.01,
        threshold=threshold,
        d_max=d_max,
        n_views=n_views,
        t_begin=0,
        t_end=n_views * FRAME_DT_NS,
    )

    rng = np.random.default_rng(1000 + variant)
    radius = 1.3 + 0.25 * rng.uniform(-1, 1)
    center = 0.25 * rng.uniform(-1, 1, 3)
    freq = rng.uniform(1.5, 3.5, 3)
    phase = rng.uniform(0, 2 * np.pi, 3)
    orbit = 3.9
    tilt = 0.35

    views = []
    for k in range(n_views):
        theta = 2.0 * np.pi * k / max(n_views, 1) * 0.45
        direction = np.array([np.sin(theta), tilt * np.sin(theta * 1.7), np.cos(theta)])
        eye = center + orbit * direction / np.linalg.norm(direction)
        pose = look_at_pose(eye, center)
        cam = CameraView(meta_to_K(meta), pose, (w, h), meta.z_near)
        depth, mask, albedo = _sphere_view(cam, center, radius, freq, phase)
        # quantize exactly as the on-disk formats do
        frame = np.round(albedo * 255.0) / 255.0
        depth = depth.astype(np.float32).astype(np.float64)
        views.append(SceneView(pose, frame, depth, mask))

    state = SimulatorState.zeros((w, h), threshold)
    streams = []
    for k in range(n_views - 1):
        lp = np.log(LOG_EPS + views[k].frame)
        ln = np.log(LOG_EPS + views[k + 1].frame)
        stream, state = simulate_events(lp, ln, k * FRAME_DT_NS, (k + 1) * FRAME_DT_NS, state)
        streams.append(stream)
    if streams:
        joined = concatenate_streams(streams)
        events = EventStream(
            joined.t, joined.x, joined.y, joined.p, joined.resolution, 0, n_views * FRAME_DT_NS
        )
    else:
        events = EventStream.empty((w, h), 0, n_views * FRAME_DT_NS)
    return SceneBundle(meta, views, events)


def meta_to_K(meta: SceneMeta) -> np.ndarray:
    return np.array([[meta.fx, 0.0, meta.cx], [0.0, meta.fy, meta.cy], [0.0, 0.0, 1.0]])


def make_smooth_target(resolution: tuple[int, int] = (64, 64), seed: int = 0) -> np.ndarray:
    """Smooth [0, 1] image built from a handful of Gaussian bumps."""
    w, h = resolution
    rng = np.random.default_rng(seed)
    u, v = np.meshgrid(np.arange(w), np.arange(h))
    img = np.zeros((h, w))
    for _ in range(6):
        cu, cv = rng.uniform(0.15, 0.85) * w, rng.uniform(0.15, 0.85) * h
        su, sv = rng.uniform(0.08, 0.25) * w, rng.uniform(0.08, 0.25) * h
        amp = rng.uniform(-0.5, 0.9)
        img += amp * np.exp(-(((u - cu) / su) ** 2 + ((v - cv) / sv) ** 2))
    lo, hi = img.min(), img.max()
    return 0.1 + 0.8 * (img - lo) / (hi - lo)


def make_random_cloud(
    cam: CameraView,
    n: int,
    seed: int = 0,
    depth_range: tuple[float, float] = (2.0, 6.0),
    sigma_px: tuple[float, float] = (0.8, 2.5),
    opacity_range: tuple[float, float] = (0.2, 0.95),
) -> GaussianCloud:
    """Random but valid cloud scattered through the camera frustum."""
    rng = np.random.default_rng(seed)
    w, h = cam.resolution
    u = rng.uniform(0, w - 1, n)
    v = rng.uniform(0, h - 1, n)
    z = rng.uniform(depth_range[0], depth_range[1], n)
    xn = (u - cam.cx) / cam.fx
    yn = (v - cam.cy) / cam.fy
    p_cam = np.stack([xn * z, yn * z, z], axis=1)
    mu = p_cam @ cam.P[:3, :3].T + cam.P[:3, 3]

    q = rng.normal(size=(n, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    px = rng.uniform(sigma_px[0], sigma_px[1], (n, 3))
    s = px * (z / cam.fx)[:, None]
    o = rng.uniform(opacity_range[0], opacity_range[1], n)
    inten = rng.uniform(0.0, 1.0, n)
    return GaussianCloud(mu, q, s, o, inten)
