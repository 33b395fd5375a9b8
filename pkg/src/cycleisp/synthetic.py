"""Procedural scenes and a small reference camera pipeline.

Used as a desk-scale stand-in for a RAW/sRGB photo corpus: a linear scene is
mosaicked to give the RAW ground truth, and rendered (white balance, colour
matrix, gamma) to give the sRGB image.  Per-image white-balance jitter makes
the RAW -> sRGB direction ambiguous without a colour reference, which is what
the colour-correction branch exists to resolve.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from . import bayer

DEFAULT_CCM = np.array([
    [1.20, -0.12, -0.08],
    [-0.10, 1.18, -0.08],
    [-0.04, -0.16, 1.20],
])


@dataclass
class CameraISP:
    wb: np.ndarray  # per-channel gains, shape (3,)
    ccm: np.ndarray = DEFAULT_CCM
    gamma: float = 2.2

    def render(self, linear: np.ndarray) -> np.ndarray:
        """``(3, H, W)`` linear camera RGB -> sRGB in [0, 1]."""
        x = linear * self.wb[:, None, None]
        x = np.einsum("ij,jhw->ihw", self.ccm, x)
        return np.clip(x, 0.0, 1.0) ** (1.0 / self.gamma)

    def unrender(self, srgb: np.ndarray) -> np.ndarray:
        """Exact inverse of :meth:`render` on unclipped values."""
        x = np.clip(srgb, 0.0, 1.0) ** self.gamma
        x = np.einsum("ij,jhw->ihw", np.linalg.inv(self.ccm), x)
        return x / self.wb[:, None, None]


def sample_isp(rng: np.random.Generator, wb_jitter: float = 0.0) -> CameraISP:
    """Base gains (1.6, 1.0, 1.4); R and B scaled by exp(U(-j, j))."""
    wb = np.array([1.6, 1.0, 1.4])
    if wb_jitter > 0:
        wb[[0, 2]] *= np.exp(rng.uniform(-wb_jitter, wb_jitter, size=2))
    return CameraISP(wb=wb)


def random_scene(rng: np.random.Generator, size: int, lo: float = 0.02, hi: float = 0.55) -> np.ndarray:
    """Linear ``(3, size, size)`` scene: smooth colour field plus a few flat-coloured shapes."""
    yy, xx = np.mgrid[0:size, 0:size] / size
    out = np.empty((3, size, size))
    for c in range(3):
        field = rng.uniform(0.2, 0.6) * np.ones((size, size))
        for _ in range(3):
            cy, cx = rng.uniform(0, 1, 2)
            s = rng.uniform(0.15, 0.5)
            field += rng.uniform(-0.4, 0.4) * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
        out[c] = field
    for _ in range(rng.integers(1, 4)):
        y0, x0 = rng.integers(0, size - size // 4, 2)
        hgt, wid = rng.integers(size // 8, size // 2, 2)
        color = rng.uniform(0.1, 0.9, 3)
        if rng.random() < 0.5:
            out[:, y0:y0 + hgt, x0:x0 + wid] = color[:, None, None]
        else:
            mask = (yy * size - y0 - hgt / 2) ** 2 + (xx * size - x0 - wid / 2) ** 2 < (min(hgt, wid) / 2) ** 2
            out[:, mask] = color[:, None]
    out = np.clip(out, 0.0, 1.0)
    return lo + (hi - lo) * out


def make_isp_pairs(n: int, size: int, rng: np.random.Generator, wb_jitter: float = 0.0,
                   isp: Optional[CameraISP] = None) -> List[dict]:
    """``n`` samples of ``{"rgb": (3,H,W) float32, "raw": (H,W) float32 RGGB mosaic}``."""
    pairs = []
    for _ in range(n):
        scene = random_scene(rng, size)
        cam = isp if isp is not None else sample_isp(rng, wb_jitter)
        pairs.append({
            "rgb": cam.render(scene).astype(np.float32),
            "raw": bayer.mosaic(scene, "RGGB").data.astype(np.float32),
        })
    return pairs


def make_srgb_images(n: int, size: int, rng: np.random.Generator, wb_jitter: float = 0.0) -> List[np.ndarray]:
    return [p["rgb"] for p in make_isp_pairs(n, size, rng, wb_jitter)]
