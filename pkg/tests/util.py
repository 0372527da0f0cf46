"""Shared helpers for the test suite."""
from __future__ import annotations

import numpy as np

from evsplat import CameraView


def make_camera(size=(32, 32), focal=None, pose=None, z_near=0.01) -> CameraView:
    w, h = size
    f = focal if focal is not None else 1.1 * w
    K = np.array([[f, 0.0, (w - 1) / 2.0], [0.0, f, (h - 1) / 2.0], [0.0, 0.0, 1.0]])
    return CameraView(K, np.eye(4) if pose is None else pose, (w, h), z_near)


def random_pose(rng) -> np.ndarray:
    """Uniform-ish random rigid camera-to-world pose."""
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    pose = np.eye(4)
    pose[:3, :3] = q
    pose[:3, 3] = rng.uniform(-2, 2, 3)
    return pose


def random_unit_quaternions(rng, n) -> np.ndarray:
    q = rng.normal(size=(n, 4))
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def rel_err(a, b, floor=1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)
