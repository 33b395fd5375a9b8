"""Heteroscedastic shot/read noise model for linear RAW data.

A pixel with clean value ``x`` receives zero-mean Gaussian noise with
variance ``shot * x + read``.  Arrays may be numpy or torch; all randomness
comes from an explicit ``numpy.random.Generator``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
import torch

from .bayer import PackedRaw, RawMosaic
from .errors import ArgumentError, DimensionError

log = logging.getLogger(__name__)

# log-uniform shot range and the log(read) ~ log(shot) regression line
SHOT_MIN = 1e-4
SHOT_MAX = 1.2e-2
READ_SLOPE = 2.18
READ_INTERCEPT = 1.20
READ_STD = 0.26


@dataclass(frozen=True)
class NoiseParams:
    shot: float
    read: float

    def __post_init__(self):
        for name in ("shot", "read"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ArgumentError(f"noise factor {name}={v!r} must be finite and >= 0")

    def to_record(self, seed: Optional[int] = None) -> dict:
        rec = asdict(self)
        rec["seed"] = seed
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "NoiseParams":
        return cls(float(rec["shot"]), float(rec["read"]))


@dataclass(frozen=True)
class NoiseResidue:
    """Per-pixel real noise (noisy minus clean), same layout as its source."""

    data: object


@dataclass
class NoiseSampling:
    """Bounds and log-space regression used to draw (shot, read) pairs."""

    shot_min: float = SHOT_MIN
    shot_max: float = SHOT_MAX
    read_slope: float = READ_SLOPE
    read_intercept: float = READ_INTERCEPT
    read_std: float = READ_STD

    def __post_init__(self):
        if not 0 < self.shot_min <= self.shot_max:
            raise ArgumentError(f"need 0 < shot_min <= shot_max, got {self.shot_min}, {self.shot_max}")
        if self.read_std < 0:
            raise ArgumentError(f"read_std must be >= 0, got {self.read_std}")

    def sample(self, rng: np.random.Generator) -> "NoiseParams":
        return sample_noise_params(rng, self.shot_min, self.shot_max, self.read_slope,
                                   self.read_intercept, self.read_std)


def sample_noise_params(
    rng: np.random.Generator,
    shot_min: float = SHOT_MIN,
    shot_max: float = SHOT_MAX,
    slope: float = READ_SLOPE,
    intercept: float = READ_INTERCEPT,
    std: float = READ_STD,
) -> NoiseParams:
    """Draw one (shot, read) pair: log-uniform shot, read correlated with shot in log space."""
    log_shot = rng.uniform(math.log(shot_min), math.log(shot_max))
    log_read = rng.normal(slope * log_shot + intercept, std)
    return NoiseParams(float(math.exp(log_shot)), float(math.exp(log_read)))


def _unwrap(x):
    if isinstance(x, (RawMosaic, PackedRaw, NoiseResidue)):
        return x.data
    return x


def _rewrap(like, data):
    if isinstance(like, RawMosaic):
        return RawMosaic(data, like.pattern)
    if isinstance(like, PackedRaw):
        return PackedRaw(data)
    return data


def noise_variance(clean, params: NoiseParams):
    """Per-pixel variance ``shot * max(clean, 0) + read``."""
    if isinstance(clean, torch.Tensor):
        return params.shot * clean.clamp(min=0) + params.read
    return params.shot * np.maximum(clean, 0) + params.read


def inject_noise(clean, params: NoiseParams, rng: np.random.Generator):
    """Return ``clean + eps`` with ``eps ~ N(0, shot * clean + read)``, unclipped.

    Accepts a RawMosaic, PackedRaw or bare array and returns the same kind.
    Negative clean values get the read-noise floor and a warning.
    """
    data = _unwrap(clean)
    if params.shot == 0 and params.read == 0:
        return clean
    is_torch = isinstance(data, torch.Tensor)
    if is_torch:
        negative = bool((data < 0).any())
    else:
        data = np.asarray(data)
        negative = bool((data < 0).any())
    if negative:
        log.warning("inject_noise: negative clean values; shot term clamped at 0 there")
    z = rng.standard_normal(tuple(data.shape))
    if is_torch:
        z = torch.from_numpy(z).to(dtype=data.dtype, device=data.device)
        std = noise_variance(data.detach(), params).sqrt()
    else:
        z = z.astype(data.dtype, copy=False) if np.issubdtype(data.dtype, np.floating) else z
        std = np.sqrt(noise_variance(data, params))
    return _rewrap(clean, data + std * z)


def noise_level_map(signal, params: NoiseParams):
    """Per-pixel noise standard deviation ``sqrt(shot * max(signal, 0) + read)``."""
    data = _unwrap(signal)
    var = noise_variance(data, params)
    return var.sqrt() if isinstance(var, torch.Tensor) else np.sqrt(var)


def _check_pair(a, b):
    if isinstance(a, RawMosaic) and isinstance(b, RawMosaic) and a.pattern != b.pattern:
        raise DimensionError(f"pattern mismatch: {a.pattern.value} vs {b.pattern.value}")
    da, db = _unwrap(a), _unwrap(b)
    if tuple(da.shape) != tuple(db.shape):
        raise DimensionError(f"shape mismatch: {tuple(da.shape)} vs {tuple(db.shape)}")
    return da, db


def extract_residue(raw_noisy, raw_clean) -> NoiseResidue:
    noisy, clean = _check_pair(raw_noisy, raw_clean)
    return NoiseResidue(noisy - clean)


def apply_residue(clean_hat, residue: NoiseResidue):
    clean, res = _check_pair(clean_hat, residue)
    if isinstance(clean, torch.Tensor) and not isinstance(res, torch.Tensor):
        res = torch.as_tensor(res, dtype=clean.dtype, device=clean.device)
    return _rewrap(clean_hat, clean + res)
