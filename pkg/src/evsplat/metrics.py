"""Image and depth evaluation metrics: PSNR, SSIM, and foreground depth errors."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import convolve2d

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PSNR_CAP = 99.0
_PSNR_MSE_FLOOR = 1e-10


@dataclass(frozen=True)
class MetricReport:
    psnr: float
    ssim: float
    rmse: float
    mae: float
    abs_rel: float
    sq_rel: float

    def to_dict(self) -> dict[str, float]:
        return {
            "psnr": self.psnr,
            "ssim": self.ssim,
            "rmse": self.rmse,
            "mae": self.mae,
            "abs_rel": self.abs_rel,
            "sq_rel": self.sq_rel,
        }


def psnr(pred: np.ndarray, gt: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB for unit-range images, capped at 99."""
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    mse = float(np.mean((pred - gt) ** 2))
    if mse < _PSNR_MSE_FLOOR:
        return PSNR_CAP
    return min(10.0 * np.log10(1.0 / mse), PSNR_CAP)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return w / w.sum()


def ssim(pred: np.ndarray, gt: np.ndarray) -> float:
    """Structural similarity with an 11x11 Gaussian window (sigma 1.5), unit range.

    Window statistics are taken over fully interior positions only; the
    returned value is the mean of that valid SSIM map.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    if min(pred.shape) < SSIM_WINDOW:
        raise ValueError(f"images must be at least {SSIM_WINDOW} pixels on each side")
    a = np.asarray(pred, dtype=np.float64)
    b = np.asarray(gt, dtype=np.float64)
    w = _gaussian_window(SSIM_WINDOW, SSIM_SIGMA)

    mu_a = convolve2d(a, w, mode="valid")
    mu_b = convolve2d(b, w, mode="valid")
    var_a = convolve2d(a * a, w, mode="valid") - mu_a * mu_a
    var_b = convolve2d(b * b, w, mode="valid") - mu_b * mu_b
    cov = convolve2d(a * b, w, mode="valid") - mu_a * mu_b

    c1 = SSIM_K1 * SSIM_K1
    c2 = SSIM_K2 * SSIM_K2
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def image_metrics(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """(PSNR, SSIM) for a pair of unit-range grayscale images."""
    return psnr(pred, gt), ssim(pred, gt)


def depth_metrics(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> tuple[float, float, float, float]:
    """(rmse, mae, abs_rel, sq_rel) over foreground pixels only.

    gt must be strictly positive wherever the mask selects; an empty mask is
    an error.
    """
    if pred.shape != gt.shape or pred.shape != mask.shape:
        raise ValueError("pred, gt, and mask shapes must match")
    sel = np.asarray(mask, dtype=bool)
    if not sel.any():
        raise ValueError("empty foreground mask")
    p = pred[sel]
    g = gt[sel]
    if np.any(g <= 0):
        raise ValueError("gt depth must be positive on the mask")
    d = p - g
    rmse = float(np.sqrt(np.mean(d * d)))
    mae = float(np.mean(np.abs(d)))
    abs_rel = float(np.mean(np.abs(d) / g))
    sq_rel = float(np.mean(d * d / g))
    return rmse, mae, abs_rel, sq_rel
