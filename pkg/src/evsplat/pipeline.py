"""Cascaded prediction pipeline: depth, intensity, then Gaussian parameter regression.

The three stages are pluggable callables bundled in a PredictorSuite. Two
reference suites ship with the package: an oracle suite backed by ground
truth (exact geometric verification) and a trainable per-pixel linear
regressor (end-to-end gradient flow at desk scale). The dense networks the
stages normally wrap are out of scope; only their input/output contracts
matter here.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, logit

from .camera import CameraView
from .events import AccumFrame, VoxelGrid
from .gaussians import (
    DEFAULT_MASK_THRESHOLD,
    GaussianCloud,
    ParameterMaps,
    activate_parameter_maps,
    activate_parameter_maps_backward,
    maps_to_cloud,
    maps_to_cloud_backward,
)
from .rasterizer import DEFAULT_CONFIG, RasterizerConfig, render_backward, render_forward

DEFAULT_D_MAX = 2.0
DEFAULT_FEATURE_DIM = 32
DEFAULT_OPACITY = 0.9
FOOTPRINT_SCALE = 1.5


@dataclass(frozen=True)
class DepthPrediction:
    """Raw disparity map, soft foreground mask, and the stage's feature volume."""

    disp: np.ndarray
    mask: np.ndarray
    feature: np.ndarray

    def __post_init__(self):
        h, w = self.disp.shape
        if self.mask.shape != (h, w):
            raise ValueError("mask shape must match disparity")
        if self.feature.ndim != 3 or self.feature.shape[:2] != (h, w):
            raise ValueError("feature must be (H, W, K)")
        if not (np.all(np.isfinite(self.disp)) and np.all(np.isfinite(self.feature))):
            raise ValueError("depth prediction must be finite")
        if self.mask.min() < 0 or self.mask.max() > 1:
            raise ValueError("mask values must lie in [0, 1]")


@dataclass(frozen=True)
class IntensityPrediction:
    """Intensity map in [0, 1] plus the stage's feature volume."""

    intensity: np.ndarray
    feature: np.ndarray

    def __post_init__(self):
        h, w = self.intensity.shape
        if self.feature.ndim != 3 or self.feature.shape[:2] != (h, w):
            raise ValueError("feature must be (H, W, K)")
        if not np.all(np.isfinite(self.intensity)):
            raise ValueError("intensity must be finite")
        if self.intensity.min() < 0 or self.intensity.max() > 1:
            raise ValueError("intensity values must lie in [0, 1]")


@dataclass(frozen=True)
class PredictorSuite:
    """The three cascade stages as opaque callables.

    depth: (voxel_k, voxel_prev) -> DepthPrediction
    intensity: (depth_feature, voxel_k, accum) -> IntensityPrediction
    regressor: (depth_map, intensity_map, intensity_feature, voxel_k) -> (H, W, 8)
               raw parameter stack split 4/3/1 into rotation, scale, opacity
    """

    depth: Callable
    intensity: Callable
    regressor: Callable


def depth_from_disparity(disp: np.ndarray, mask: np.ndarray, d_max: float = DEFAULT_D_MAX) -> np.ndarray:
    """Decode raw disparity to depth: exp(d_max * sigmoid(disp) * mask).

    Output lies in [1, e^(d_max)]; masked-out pixels land exactly at depth 1
    and are dropped later by the mask gate in maps_to_cloud.
    """
    if d_max <= 0:
        raise ValueError("d_max must be positive")
    disp = np.asarray(disp, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not np.all(np.isfinite(disp)):
        raise ValueError("disparity must be finite")
    return np.exp(d_max * (expit(disp) * mask))


@dataclass(frozen=True)
class CascadeResult:
    """Cloud plus the intermediate maps every stage produced."""

    cloud: GaussianCloud
    depth: np.ndarray
    intensity: np.ndarray
    mask: np.ndarray
    maps: ParameterMaps


def run_cascade_full(
    voxel_k: VoxelGrid,
    voxel_prev: VoxelGrid,
    accum: AccumFrame,
    suite: PredictorSuite,
    cam: CameraView,
    d_max: float = DEFAULT_D_MAX,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
) -> CascadeResult:
    """Run depth -> intensity -> regression and assemble the Gaussian cloud."""
    res = (voxel_k.resolution[1], voxel_k.resolution[0])
    if voxel_prev.resolution != voxel_k.resolution:
        raise ValueError(
            f"depth stage: previous voxel grid resolution {voxel_prev.resolution} "
            f"!= current {voxel_k.resolution}"
        )
    if accum.resolution != voxel_k.resolution:
        raise ValueError(
            f"intensity stage: accumulation frame resolution {accum.resolution} "
            f"!= voxel grid {voxel_k.resolution}"
        )
    if (cam.height, cam.width) != res:
        raise ValueError(f"camera resolution {cam.resolution} != voxel grid {voxel_k.resolution}")

    dp = suite.depth(voxel_k, voxel_prev)
    if dp.disp.shape != res:
        raise ValueError(f"depth stage: predictor returned shape {dp.disp.shape}, expected {res}")
    depth = depth_from_disparity(dp.disp, dp.mask, d_max)

    ip = suite.intensity(dp.feature, voxel_k, accum)
    if ip.intensity.shape != res:
        raise ValueError(f"intensity stage: predictor returned shape {ip.intensity.shape}, expected {res}")
    intensity = dp.mask * ip.intensity

    raw = suite.regressor(depth, intensity, ip.feature, voxel_k)
    if raw.shape != res + (8,):
        raise ValueError(f"regressor stage: output shape {raw.shape}, expected {res + (8,)}")

    maps = ParameterMaps(
        raw_rot=raw[..., 0:4],
        raw_scale=raw[..., 4:7],
        raw_opacity=raw[..., 7:8],
        depth=depth,
        intensity=intensity,
        mask=dp.mask,
    )
    activated = activate_parameter_maps(maps)
    cloud = maps_to_cloud(activated, cam, mask_threshold)
    return CascadeResult(cloud, depth, intensity, dp.mask, activated)


def run_cascade(
    voxel_k: VoxelGrid,
    voxel_prev: VoxelGrid,
    accum: AccumFrame,
    suite: PredictorSuite,
    cam: CameraView,
    d_max: float = DEFAULT_D_MAX,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
) -> GaussianCloud:
    return run_cascade_full(voxel_k, voxel_prev, accum, suite, cam, d_max, mask_threshold).cloud


def default_raw_scale(depth: np.ndarray, focal_px: float) -> np.ndarray:
    """Log scale giving roughly 1.5x pixel footprint in world units at each depth."""
    return np.log(FOOTPRINT_SCALE * depth / focal_px)


def make_oracle_suite(
    gt_depth: np.ndarray,
    gt_intensity: np.ndarray,
    *,
    focal_px: float,
    d_max: float = DEFAULT_D_MAX,
    feature_dim: int = DEFAULT_FEATURE_DIM,
    opacity: float = DEFAULT_OPACITY,
) -> PredictorSuite:
    """Ground-truth-backed predictors standing in for the trained stages.

    The depth predictor emits the disparity whose decode inverts exactly on
    the foreground (mask = gt_depth > 0); the intensity predictor passes the
    ground truth through; the regressor emits constant raw maps: identity
    quaternion, log of the focal-derived pixel footprint, and the opacity
    logit. focal_px must be the fx of the camera the cloud will be built
    for, so the footprint rule has the right scale.
    """
    gt_depth = np.asarray(gt_depth, dtype=np.float64)
    gt_intensity = np.asarray(gt_intensity, dtype=np.float64)
    if gt_depth.shape != gt_intensity.shape:
        raise ValueError("ground-truth depth and intensity shapes must match")
    if not (np.all(np.isfinite(gt_depth)) and np.all(np.isfinite(gt_intensity))):
        raise ValueError("ground truth must be finite")
    if np.any(gt_depth < 0):
        raise ValueError("gt_depth must be non-negative (0 marks background)")
    fg = gt_depth > 0
    if np.any(fg & ((gt_depth <= 1.0) | (gt_depth >= np.exp(d_max)))):
        raise ValueError(
            f"foreground depths must lie strictly inside (1, e^d_max) = (1, {np.exp(d_max):.4g})"
        )
    if focal_px <= 0:
        raise ValueError("focal_px must be positive")

    h, w = gt_depth.shape
    mask = fg.astype(np.float64)
    disp = np.zeros((h, w))
    disp[fg] = logit(np.log(gt_depth[fg]) / d_max)

    def depth_predictor(voxel_k, voxel_prev):
        return DepthPrediction(disp, mask, np.zeros((h, w, feature_dim)))

    def intensity_predictor(depth_feature, voxel_k, accum):
        return IntensityPrediction(gt_intensity, np.zeros((h, w, feature_dim)))

    raw_o = float(logit(opacity))

    def regressor(depth, intensity, feature, voxel_k):
        raw = np.zeros((h, w, 8))
        raw[..., 0] = 1.0
        raw[..., 4:7] = default_raw_scale(depth, focal_px)[..., None]
        raw[..., 7] = raw_o
        return raw

    return PredictorSuite(depth_predictor, intensity_predictor, regressor)


class PerPixelRegressor:
    """Per-pixel linear map from (depth, intensity, voxel bins, features) to raw parameters.

    weight has shape (8, 2 + bins + feature_dim), bias (8,). The output
    channels split 4/3/1 into raw rotation, scale, and opacity. forward and
    backward are exact; the backward returns gradients for the weights and
    for every input map.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        weight = np.ascontiguousarray(weight, dtype=np.float64)
        bias = np.ascontiguousarray(bias, dtype=np.float64)
        if weight.ndim != 2 or weight.shape[0] != 8:
            raise ValueError(f"weight must be (8, n_features), got {weight.shape}")
        if bias.shape != (8,):
            raise ValueError(f"bias must be (8,), got {bias.shape}")
        self.weight = weight
        self.bias = bias

    @property
    def n_features(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def zeros(cls, bins: int = 5, feature_dim: int = DEFAULT_FEATURE_DIM) -> PerPixelRegressor:
        return cls(np.zeros((8, 2 + bins + feature_dim)), np.zeros(8))

    @staticmethod
    def assemble_features(depth, intensity, feature, voxel: VoxelGrid) -> np.ndarray:
        vox = np.transpose(voxel.data, (1, 2, 0))
        return np.concatenate([depth[..., None], intensity[..., None], vox, feature], axis=-1)

    def forward(self, depth, intensity, feature, voxel: VoxelGrid) -> np.ndarray:
        feats = self.assemble_features(depth, intensity, feature, voxel)
        if feats.shape[-1] != self.n_features:
            raise ValueError(
                f"assembled {feats.shape[-1]} features per pixel, weight expects {self.n_features}"
            )
        return feats @ self.weight.T + self.bias

    def backward(self, depth, intensity, feature, voxel: VoxelGrid, d_out: np.ndarray):
        """Gradients of a scalar loss given d_out = dL/d(raw stack).

        Returns (d_weight, d_bias, d_depth, d_intensity, d_feature, d_voxel).
        """
        feats = self.assemble_features(depth, intensity, feature, voxel)
        d_weight = np.einsum("hwo,hwf->of", d_out, feats)
        d_bias = d_out.sum(axis=(0, 1))
        d_feats = d_out @ self.weight
        bins = voxel.bins
        d_depth = d_feats[..., 0]
        d_intensity = d_feats[..., 1]
        d_voxel = np.transpose(d_feats[..., 2 : 2 + bins], (2, 0, 1))
        d_feature = d_feats[..., 2 + bins :]
        return d_weight, d_bias, d_depth, d_intensity, d_feature, d_voxel


def make_linear_suite(
    gt_depth: np.ndarray,
    gt_intensity: np.ndarray,
    regressor: PerPixelRegressor,
    *,
    focal_px: float,
    d_max: float = DEFAULT_D_MAX,
    feature_dim: int = DEFAULT_FEATURE_DIM,
) -> PredictorSuite:
    """Oracle depth/intensity stages with a trainable linear regressor head."""
    oracle = make_oracle_suite(
        gt_depth, gt_intensity, focal_px=focal_px, d_max=d_max, feature_dim=feature_dim
    )
    return PredictorSuite(oracle.depth, oracle.intensity, regressor.forward)


def regressor_render_gradients(
    regressor: PerPixelRegressor,
    depth: np.ndarray,
    intensity: np.ndarray,
    feature: np.ndarray,
    voxel: VoxelGrid,
    mask: np.ndarray,
    cam: CameraView,
    target: np.ndarray,
    background: float = 0.0,
    mask_threshold: float = DEFAULT_MASK_THRESHOLD,
    config: RasterizerConfig = DEFAULT_CONFIG,
):
    """Mean-squared rendering loss and its exact gradient in the regressor weights.

    Chains the linear head through activation, cloud assembly, and the
    rasterizer backward pass. Returns (loss, d_weight, d_bias, rendered).
    """
    raw = regressor.forward(depth, intensity, feature, voxel)
    maps = ParameterMaps(
        raw_rot=raw[..., 0:4],
        raw_scale=raw[..., 4:7],
        raw_opacity=raw[..., 7:8],
        depth=depth,
        intensity=intensity,
        mask=mask,
    )
    activated = activate_parameter_maps(maps)
    cloud = maps_to_cloud(activated, cam, mask_threshold)
    out = render_forward(cloud, cam, background, config)

    diff = out.image - target
    n_px = diff.size
    loss = float(np.mean(diff * diff))
    dl_dimage = 2.0 * diff / n_px

    grads = render_backward(cloud, cam, background, dl_dimage, config)
    mg = maps_to_cloud_backward(activated, cam, grads, mask_threshold)
    d_rot_raw, d_scale_raw, d_opacity_raw = activate_parameter_maps_backward(
        maps, mg.d_rot, mg.d_scale, mg.d_opacity
    )
    d_raw = np.concatenate([d_rot_raw, d_scale_raw, d_opacity_raw], axis=-1)
    d_weight, d_bias, *_ = regressor.backward(depth, intensity, feature, voxel, d_raw)
    return loss, d_weight, d_bias, out.image
