"""Networks: RGB2RAW, colour-correction, RAW2RGB, the full cycle and the denoiser."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import bayer
from .blocks import RRG, conv, count_params, gaussian_blur, pixel_shuffle_up, zero_
from .errors import ArgumentError, ConfigError, DimensionError
from .noise import NoiseParams, NoiseResidue, apply_residue, inject_noise


@dataclass
class BranchConfig:
    n_rrg: int = 3
    n_dab: int = 5
    channels: int = 64
    reduction: int = 8


@dataclass
class ColorConfig:
    n_rrg: int = 2
    n_dab: int = 3
    channels: int = 64
    reduction: int = 8
    blur_sigma: float = 12.0


@dataclass
class CycleConfig:
    rgb2raw: BranchConfig = field(default_factory=BranchConfig)
    raw2rgb: BranchConfig = field(default_factory=BranchConfig)
    color_corr: ColorConfig = field(default_factory=ColorConfig)


@dataclass
class DenoiserConfig:
    n_rrg: int = 4
    n_dab: int = 8
    channels: int = 64
    reduction: int = 8
    mode: str = "raw"

    def __post_init__(self):
        if self.mode not in ("raw", "srgb"):
            raise ConfigError(f"denoiser mode must be 'raw' or 'srgb', got {self.mode!r}")

    @property
    def in_channels(self) -> int:
        return 8 if self.mode == "raw" else 3

    @property
    def out_channels(self) -> int:
        return 4 if self.mode == "raw" else 3


def _check_even(x: torch.Tensor, who: str):
    if x.dim() != 4 or x.shape[1] != 3:
        raise DimensionError(f"{who} expects (N, 3, H, W), got {tuple(x.shape)}")
    if x.shape[-2] % 2 or x.shape[-1] % 2:
        raise DimensionError(f"{who} needs even H and W, got {tuple(x.shape[-2:])}")


class RGB2RAW(nn.Module):
    """sRGB -> linear demosaicked image -> RGGB mosaic."""

    def __init__(self, cfg: BranchConfig = BranchConfig()):
        super().__init__()
        c = cfg.channels
        self.head = conv(3, c)
        self.body = nn.Sequential(*[RRG(c, cfg.n_dab, cfg.reduction) for _ in range(cfg.n_rrg)])
        self.tail = conv(c, 3)

    def forward(self, rgb: torch.Tensor):
        """Returns ``(dem_hat (N,3,H,W), raw_hat (N,H,W) RGGB)``."""
        _check_even(rgb, "RGB2RAW")
        dem = self.tail(self.body(self.head(rgb)))
        return dem, bayer.mosaic(dem, bayer.BayerPattern.RGGB).data


class ColorCorrection(nn.Module):
    """Blurred sRGB -> half-resolution colour gate in (0, 1)."""

    def __init__(self, cfg: ColorConfig = ColorConfig()):
        super().__init__()
        c = cfg.channels
        self.blur_sigma = cfg.blur_sigma
        self.head = conv(3, c)
        self.body = nn.Sequential(*[RRG(c, cfg.n_dab, cfg.reduction) for _ in range(cfg.n_rrg)])
        self.tail = conv(c, c)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        _check_even(rgb, "ColorCorrection")
        # blur at full resolution first, then average 2x2 blocks onto the packed grid
        x = F.avg_pool2d(gaussian_blur(rgb, self.blur_sigma), 2)
        return torch.sigmoid(self.tail(self.body(self.head(x))))


class RAW2RGB(nn.Module):
    """Packed RAW -> sRGB with a colour-attention unit fed by a reference image."""

    def __init__(self, cfg: BranchConfig = BranchConfig(), color: ColorConfig = ColorConfig()):
        super().__init__()
        if cfg.n_rrg < 2:
            raise ConfigError("RAW2RGB needs at least 2 RRGs (one on each side of the colour gate)")
        if color.channels != cfg.channels:
            raise ConfigError("colour branch width must equal the RAW2RGB width")
        c = cfg.channels
        self.head = conv(4, c)
        self.encoder = nn.Sequential(*[RRG(c, cfg.n_dab, cfg.reduction) for _ in range(cfg.n_rrg - 1)])
        self.decoder = RRG(c, cfg.n_dab, cfg.reduction)
        self.tail = conv(c, 12)
        self.color = ColorCorrection(color)

    def encode(self, packed: torch.Tensor) -> torch.Tensor:
        return self.encoder(self.head(packed))

    def forward(self, packed: torch.Tensor, color_ref: torch.Tensor,
                color_gate: Optional[Union[float, torch.Tensor]] = None) -> torch.Tensor:
        """``packed`` is (N,4,h,w) RGGB; ``color_ref`` is (N,3,2h,2w).

        ``color_gate`` overrides the colour branch output (tests / diagnostics).
        """
        if packed.dim() != 4 or packed.shape[1] != 4:
            raise DimensionError(f"RAW2RGB expects packed (N, 4, h, w), got {tuple(packed.shape)}")
        h, w = packed.shape[-2:]
        if tuple(color_ref.shape[-2:]) != (2 * h, 2 * w) or color_ref.shape[0] != packed.shape[0]:
            raise DimensionError(
                f"colour reference {tuple(color_ref.shape)} misaligned with packed {tuple(packed.shape)}")
        t = self.encode(packed)
        gate = self.color(color_ref) if color_gate is None else color_gate
        t = self.attend(t, gate)
        return pixel_shuffle_up(self.tail(self.decoder(t)), 2)

    @staticmethod
    def attend(t: torch.Tensor, gate) -> torch.Tensor:
        return t + t * gate


NoiseSwitch = Union[None, NoiseParams, NoiseResidue]


class CycleISP(nn.Module):
    def __init__(self, cfg: CycleConfig = CycleConfig()):
        super().__init__()
        self.config = cfg
        self.rgb2raw = RGB2RAW(cfg.rgb2raw)
        self.raw2rgb = RAW2RGB(cfg.raw2rgb, cfg.color_corr)

    def forward(self, rgb: torch.Tensor, switch: NoiseSwitch = None,
                rng: Optional[np.random.Generator] = None, color_ref: Optional[torch.Tensor] = None):
        """Returns ``(raw_hat, raw_fed, rgb_hat)``; ``raw_fed`` is what RAW2RGB saw."""
        _, raw_hat = self.rgb2raw(rgb)
        raw_fed = raw_hat
        if isinstance(switch, NoiseParams):
            if rng is None:
                raise ArgumentError("noise injection needs an explicit rng")
            raw_fed = inject_noise(raw_hat, switch, rng)
        elif isinstance(switch, NoiseResidue):
            res = switch.data
            if isinstance(res, bayer.RawMosaic):
                res = res.data
            raw_fed = apply_residue(raw_hat, NoiseResidue(res))
        elif switch is not None and switch != "off":
            raise ArgumentError(f"unknown noise switch state {switch!r}")
        packed = bayer.pack(bayer.RawMosaic(raw_fed, bayer.BayerPattern.RGGB)).data
        rgb_hat = self.raw2rgb(packed, rgb if color_ref is None else color_ref)
        return raw_hat, raw_fed, rgb_hat


class Denoiser(nn.Module):
    """head conv -> RRGs -> zero-initialised tail conv, plus a global skip."""

    def __init__(self, cfg: DenoiserConfig = DenoiserConfig()):
        super().__init__()
        self.config = cfg
        c = cfg.channels
        self.head = conv(cfg.in_channels, c)
        self.body = nn.Sequential(*[RRG(c, cfg.n_dab, cfg.reduction) for _ in range(cfg.n_rrg)])
        self.tail = zero_(conv(c, cfg.out_channels))

    def forward(self, x: torch.Tensor, noise_map: Optional[torch.Tensor] = None) -> torch.Tensor:
        cfg = self.config
        if cfg.mode == "raw":
            if noise_map is None:
                raise ArgumentError("raw-mode denoising needs a 4-channel noise level map")
            if x.shape[1] != 4 or noise_map.shape != x.shape:
                raise DimensionError(f"raw input {tuple(x.shape)} / map {tuple(noise_map.shape)} must both be (N,4,h,w)")
            inp = torch.cat([x, noise_map], dim=1)
        else:
            if noise_map is not None:
                raise ArgumentError("sRGB-mode denoising takes no noise level map")
            if x.shape[1] != 3:
                raise DimensionError(f"sRGB input must be (N,3,H,W), got {tuple(x.shape)}")
            inp = x
        return x + self.tail(self.body(self.head(inp)))


# functional entry points -----------------------------------------------------

def rgb2raw_forward(rgb: torch.Tensor, model: RGB2RAW):
    dem, raw = model(rgb)
    return dem, bayer.RawMosaic(raw, bayer.BayerPattern.RGGB)


def color_correction(rgb: torch.Tensor, model: ColorCorrection) -> torch.Tensor:
    return model(rgb)


def raw2rgb_forward(raw: bayer.RawMosaic, color_ref: torch.Tensor, model: RAW2RGB, color_gate=None):
    """Unify/pack ``raw`` and render it; ``color_ref`` is cropped alongside any unification."""
    if not isinstance(raw, bayer.RawMosaic):
        raise bayer.PatternError("raw2rgb_forward needs a pattern-tagged RawMosaic")
    if tuple(color_ref.shape[-2:]) != (raw.height, raw.width):
        raise DimensionError(
            f"colour reference {tuple(color_ref.shape[-2:])} misaligned with mosaic {(raw.height, raw.width)}")
    oy, ox = bayer.unify_offsets(raw.pattern)
    color_ref = color_ref[..., oy: raw.height - oy, ox: raw.width - ox]
    data = raw.data
    if data.dim() == 2:
        data = data.unsqueeze(0)
    packed = bayer.pack(bayer.RawMosaic(data, raw.pattern)).data
    if color_ref.dim() == 3:
        color_ref = color_ref.unsqueeze(0)
    return model(packed, color_ref, color_gate)


def cycle_forward(rgb: torch.Tensor, switch: NoiseSwitch, model: CycleISP,
                  rng: Optional[np.random.Generator] = None):
    raw_hat, _, rgb_hat = model(rgb, switch, rng)
    return bayer.RawMosaic(raw_hat, bayer.BayerPattern.RGGB), rgb_hat


def denoiser_forward(x: torch.Tensor, noise_map: Optional[torch.Tensor], model: Denoiser) -> torch.Tensor:
    return model(x, noise_map)


__all__ = [
    "BranchConfig", "ColorConfig", "CycleConfig", "DenoiserConfig",
    "RGB2RAW", "ColorCorrection", "RAW2RGB", "CycleISP", "Denoiser",
    "rgb2raw_forward", "color_correction", "raw2rgb_forward", "cycle_forward",
    "denoiser_forward", "count_params",
]
