"""Joint loss, its analytic gradients, and desk-scale Gaussian fitting.

The joint loss weighs three branches: source-view intensity (L2 plus an
optional perceptual term), source-view depth (L1), and the rendered target
view (L2 plus perceptual). fit_gaussians drives the differentiable renderer
with plain gradient descent as a verification harness for the backward pass.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit, logit

from .camera import CameraView, unproject_pixel
from .gaussians import GaussianCloud
from .rasterizer import DEFAULT_CONFIG, RasterizerConfig, render_backward, render_forward


@dataclass(frozen=True)
class LossWeights:
    """Branch coefficients; lambdas weigh intensity/depth/render, betas mix L2 with perceptual."""

    lambda1: float = 0.2
    lambda2: float = 0.2
    lambda3: float = 0.6
    beta1: float = 0.8
    beta2: float = 0.2

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "lambda3", "beta1", "beta2"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class JointLossTargets:
    """Ground truth for the three branches: source intensity, source depth, target intensity."""

    intensity_src: np.ndarray
    depth_src: np.ndarray
    intensity_tgt: np.ndarray


@dataclass(frozen=True)
class JointLossGradients:
    d_intensity: np.ndarray
    d_depth: np.ndarray
    d_rendered: np.ndarray


def _l2(pred, gt):
    diff = pred - gt
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def _l1(pred, gt):
    diff = pred - gt
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def joint_loss(
    intensity_pred: np.ndarray,
    depth_pred: np.ndarray,
    rendered: np.ndarray,
    targets: JointLossTargets,
    weights: LossWeights = LossWeights(),
    perceptual: Optional[Callable] = None,
) -> tuple[float, JointLossGradients]:
    """Weighted joint loss and its gradient for each of the three predictions.

    perceptual, when given, is a callable (pred, gt) -> (value, grad) slotted
    into the intensity and render branches with weight beta2; by default that
    term is the zero functional. L1 uses the zero subgradient at ties.
    """
    if intensity_pred.shape != targets.intensity_src.shape:
        raise ValueError("intensity prediction and target shapes must match")
    if depth_pred.shape != targets.depth_src.shape:
        raise ValueError("depth prediction and target shapes must match")
    if rendered.shape != targets.intensity_tgt.shape:
        raise ValueError("rendered image and target shapes must match")

    l2_i, g2_i = _l2(intensity_pred, targets.intensity_src)
    l1_d, g1_d = _l1(depth_pred, targets.depth_src)
    l2_r, g2_r = _l2(rendered, targets.intensity_tgt)

    if perceptual is not None:
        lp_i, gp_i = perceptual(intensity_pred, targets.intensity_src)
        lp_r, gp_r = perceptual(rendered, targets.intensity_tgt)
    else:
        lp_i, gp_i = 0.0, 0.0
        lp_r, gp_r = 0.0, 0.0

    w = weights
    loss_i = w.beta1 * l2_i + w.beta2 * lp_i
    loss_d = l1_d
    loss_r = w.beta1 * l2_r + w.beta2 * lp_r
    total = w.lambda1 * loss_i + w.lambda2 * loss_d + w.lambda3 * loss_r

    grads = JointLossGradients(
        d_intensity=w.lambda1 * (w.beta1 * g2_i + w.beta2 * gp_i),
        d_depth=w.lambda2 * g1_d,
        d_rendered=w.lambda3 * (w.beta1 * g2_r + w.beta2 * gp_r),
    )
    return total, grads


@dataclass(frozen=True)
class FitConfig:
    """Per-parameter-group step sizes for plain gradient descent.

    Position steps scale with the initial cloud's bounding-box diagonal;
    scale and opacity are stepped in log and logit space so their range
    constraints hold by construction.
    """

    step_mu: float = 1e-3
    step_q: float = 1e-3
    step_log_s: float = 5e-3
    step_logit_o: float = 5e-2
    step_intensity: float = 2.5e-2
    depth_range: tuple[float, float] = (2.5, 5.0)
    opacity_init: float = 0.9
    intensity_init: float = 0.5
    footprint: float = 1.5
    background: float = 0.0
    raster: RasterizerConfig = field(default_factory=RasterizerConfig)


def _init_cloud(target: np.ndarray, cam: CameraView, n: int, config: FitConfig, rng) -> GaussianCloud:
    w, h = cam.resolution
    u = rng.uniform(0, w - 1, n)
    v = rng.uniform(0, h - 1, n)
    z = rng.uniform(config.depth_range[0], config.depth_range[1], n)
    mu = np.stack([unproject_pixel(u[i], v[i], z[i], cam) for i in range(n)])
    q = np.tile([1.0, 0.0, 0.0, 0.0], (n, 1))
    s = np.repeat((config.footprint * z / cam.fx)[:, None], 3, axis=1)
    o = np.full(n, config.opacity_init)
    i = np.full(n, config.intensity_init)
    return GaussianCloud(mu, q, s, o, i)


def fit_gaussians(
    target: np.ndarray,
    cam: CameraView,
    n: int,
    iters: int,
    config: FitConfig = FitConfig(),
    seed: int = 0,
) -> tuple[GaussianCloud, list[float]]:
    """Fit n primitives to one target image by gradient descent on the L2 loss.

    Primitives start at seeded-random positions unprojected from the image
    with default parameters. Each iteration renders, backpropagates, and
    steps every group; quaternions are renormalized after each step and
    intensities clipped to [0, 1]. Returns the fitted cloud and the loss
    trace (initial loss plus one entry per iteration, length iters + 1).
    """
    if n < 1:
        raise ValueError("need at least one primitive")
    if iters < 0:
        raise ValueError("iters must be non-negative")
    w, h = cam.resolution
    if target.shape != (h, w):
        raise ValueError(f"target must be (H, W) = {(h, w)}, got {target.shape}")

    rng = np.random.default_rng(seed)
    cloud = _init_cloud(target, cam, n, config, rng)
    extent = float(np.linalg.norm(cloud.mu.max(axis=0) - cloud.mu.min(axis=0)))
    if extent == 0.0:
        extent = 1.0

    mu = cloud.mu.copy()
    q = cloud.q.copy()
    log_s = np.log(cloud.s)
    logit_o = logit(cloud.opacity)
    inten = cloud.intensity.copy()

    n_px = target.size
    trace: list[float] = []
    for it in range(iters + 1):
        cloud = GaussianCloud(mu, q, np.exp(log_s), expit(logit_o), inten)
        out = render_forward(cloud, cam, config.background, config.raster)
        diff = out.image - target
        loss = float(np.mean(diff * diff))
        trace.append(loss)
        if it == iters:
            break

        grads = render_backward(cloud, cam, config.background, 2.0 * diff / n_px, config.raster)
        s_now = np.exp(log_s)
        o_now = expit(logit_o)
        mu -= config.step_mu * extent * grads.d_mu
        q -= config.step_q * grads.d_q
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        log_s -= config.step_log_s * (grads.d_s * s_now)
        logit_o -= config.step_logit_o * (grads.d_o * o_now * (1.0 - o_now))
        inten = np.clip(inten - config.step_intensity * grads.d_intensity, 0.0, 1.0)

    return cloud, trace
