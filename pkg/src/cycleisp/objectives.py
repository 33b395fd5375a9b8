"""Training losses and image-quality metrics.

Losses are means over all elements, so their scale does not depend on resolution.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict

import numpy as np
import torch
from scipy import ndimage

from .errors import ArgumentError, DimensionError

DEFAULT_EPSILON = 1e-4
DEFAULT_BETA = 0.5
# psnr() returns this when the two images are identical
PSNR_CAP = 100.0


@dataclass
class LossValue:
    value: torch.Tensor
    components: Dict[str, torch.Tensor] = field(default_factory=dict)

    def item(self) -> float:
        return float(self.value.detach())

    def as_record(self) -> Dict[str, float]:
        rec = {k: float(v.detach()) for k, v in self.components.items()}
        rec["total"] = self.item()
        return rec


def _same_shape(a, b):
    if tuple(a.shape) != tuple(b.shape):
        raise DimensionError(f"shape mismatch: {tuple(a.shape)} vs {tuple(b.shape)}")


def loss_s2r(raw_hat: torch.Tensor, raw_gt: torch.Tensor, epsilon: float = DEFAULT_EPSILON) -> LossValue:
    """L1 in linear plus L1 in log domain (both arguments clamped below at epsilon)."""
    _same_shape(raw_hat, raw_gt)
    if not epsilon > 0:
        raise ArgumentError(f"epsilon must be > 0, got {epsilon}")
    l1 = (raw_hat - raw_gt).abs().mean()
    log_l1 = (torch.log(raw_hat.clamp(min=epsilon)) - torch.log(raw_gt.clamp(min=epsilon))).abs().mean()
    return LossValue(l1 + log_l1, {"l1": l1, "log_l1": log_l1})


def loss_r2s(rgb_hat: torch.Tensor, rgb_gt: torch.Tensor) -> LossValue:
    _same_shape(rgb_hat, rgb_gt)
    l1 = (rgb_hat - rgb_gt).abs().mean()
    return LossValue(l1, {"l1": l1})


def loss_joint(raw_hat, raw_gt, rgb_hat, rgb_gt, beta: float = DEFAULT_BETA,
               epsilon: float = DEFAULT_EPSILON) -> LossValue:
    """``beta * loss_s2r + (1 - beta) * loss_r2s``.

    RAW2RGB parameters only see the second term, since ``raw_hat`` does not
    depend on them; RGB2RAW parameters see both.
    """
    if not 0 < beta < 1:
        raise ArgumentError(f"beta must lie in (0, 1), got {beta}")
    s2r = loss_s2r(raw_hat, raw_gt, epsilon)
    r2s = loss_r2s(rgb_hat, rgb_gt)
    total = beta * s2r.value + (1 - beta) * r2s.value
    return LossValue(total, {"s2r": s2r.value, "r2s": r2s.value})


def _np(x) -> np.ndarray:
    if isinstance(x, torch.Tensor):
        x = x.detach().cpu().numpy()
    return np.asarray(x, dtype=np.float64)


def psnr(a, b, peak: float = 1.0) -> float:
    """PSNR in dB, capped at ``PSNR_CAP``."""
    a, b = _np(a), _np(b)
    _same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, 10.0 * math.log10(peak * peak / mse))


def _ssim_2d(x: np.ndarray, y: np.ndarray, data_range: float) -> float:
    # 11x11 Gaussian window, sigma 1.5; statistics only where the window fits
    filt = lambda z: ndimage.gaussian_filter(z, 1.5, truncate=5 / 1.5, mode="reflect")
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    mx, my = filt(x), filt(y)
    sxx = filt(x * x) - mx * mx
    syy = filt(y * y) - my * my
    sxy = filt(x * y) - mx * my
    s = ((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2))
    return float(s[5:-5, 5:-5].mean()) if min(s.shape) > 10 else float(s.mean())


def ssim(a, b, data_range: float = 1.0) -> float:
    """Mean SSIM over the image; ``(..., C, H, W)`` inputs are averaged over all leading planes."""
    a, b = _np(a), _np(b)
    _same_shape(a, b)
    if a.ndim < 2:
        raise DimensionError("ssim needs at least a 2-D image")
    h, w = a.shape[-2:]
    planes_a, planes_b = a.reshape(-1, h, w), b.reshape(-1, h, w)
    return float(np.mean([_ssim_2d(x, y, data_range) for x, y in zip(planes_a, planes_b)]))
