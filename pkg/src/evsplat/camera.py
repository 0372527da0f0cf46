"""Pinhole camera model: poses, projection, unprojection, and the projection Jacobian.

Conventions: camera x right, y down, z forward; pixel centers at integer
coordinates; poses stored camera-to-world, the world-to-camera view transform
is derived. Depth always means camera-space z.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_Z_NEAR = 0.01

_ORTHO_TOL = 1e-9


class PointBehindCamera(ValueError):
    """Raised when a point lies at or behind the near plane."""


@dataclass(frozen=True)
class CameraView:
    """Intrinsics K (zero skew), camera-to-world pose P, image size, near plane."""

    K: np.ndarray
    P: np.ndarray
    resolution: tuple[int, int]
    z_near: float = DEFAULT_Z_NEAR

    def __post_init__(self):
        K = np.ascontiguousarray(self.K, dtype=np.float64)
        P = np.ascontiguousarray(self.P, dtype=np.float64)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "P", P)
        if K.shape != (3, 3):
            raise ValueError("K must be 3x3")
        if P.shape != (4, 4):
            raise ValueError("P must be 4x4")
        if K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("focal lengths must be positive")
        if K[0, 1] != 0 or K[1, 0] != 0 or not np.array_equal(K[2], [0, 0, 1]):
            raise ValueError("K must be zero-skew with last row (0, 0, 1)")
        R = P[:3, :3]
        if np.max(np.abs(R @ R.T - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("pose rotation must be orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("pose rotation must have determinant +1")
        if not np.array_equal(P[3], [0, 0, 0, 1]):
            raise ValueError("pose last row must be (0, 0, 0, 1)")
        w, h = self.resolution
        if w <= 0 or h <= 0:
            raise ValueError(f"bad resolution {self.resolution}")
        if self.z_near <= 0:
            raise ValueError("z_near must be positive")

    @property
    def fx(self) -> float:
        return float(self.K[0, 0])

    @property
    def fy(self) -> float:
        return float(self.K[1, 1])

    @property
    def cx(self) -> float:
        return float(self.K[0, 2])

    @property
    def cy(self) -> float:
        return float(self.K[1, 2])

    @property
    def width(self) -> int:
        return self.resolution[0]

    @property
    def height(self) -> int:
        return self.resolution[1]


def view_transform(cam: CameraView) -> np.ndarray:
    """World-to-camera matrix: the rigid inverse (R^T, -R^T t) of the pose."""
    R = cam.P[:3, :3]
    t = cam.P[:3, 3]
    W = np.eye(4)
    W[:3, :3] = R.T
    W[:3, 3] = -R.T @ t
    return W


def project_point(p_world: np.ndarray, cam: CameraView) -> tuple[float, float, float]:
    """Project a world point to (u, v, depth); raises PointBehindCamera at z <= z_near."""
    p_world = np.asarray(p_world, dtype=np.float64)
    W = view_transform(cam)
    pc = W[:3, :3] @ p_world + W[:3, 3]
    z = pc[2]
    if z <= cam.z_near:
        raise PointBehindCamera(f"camera-space z={z:.6g} is at or behind z_near={cam.z_near:.6g}")
    u = cam.fx * pc[0] / z + cam.cx
    v = cam.fy * pc[1] / z + cam.cy
    return float(u), float(v), float(z)


def unproject_pixel(u: float, v: float, depth: float, cam: CameraView) -> np.ndarray:
    """Lift pixel (u, v) at camera-space depth to a world point through the pose."""
    if depth <= 0:
        raise ValueError(f"depth must be positive, got {depth}")
    pc = np.array([(u - cam.cx) / cam.fx * depth, (v - cam.cy) / cam.fy * depth, depth])
    return cam.P[:3, :3] @ pc + cam.P[:3, 3]


def projection_jacobian(p_cam: np.ndarray, K: np.ndarray, z_near: float = DEFAULT_Z_NEAR) -> np.ndarray:
    """2x3 derivative of pinhole projection at a camera-space point.

    J = [[fx/z, 0, -fx*x/z^2],
         [0, fy/z, -fy*y/z^2]]
    """
    x, y, z = np.asarray(p_cam, dtype=np.float64)
    if z <= z_near:
        raise PointBehindCamera(f"camera-space z={z:.6g} is at or behind z_near={z_near:.6g}")
    fx, fy = K[0, 0], K[1, 1]
    return np.array(
        [
            [fx / z, 0.0, -fx * x / (z * z)],
            [0.0, fy / z, -fy * y / (z * z)],
        ]
    )
