"""Learnable building blocks: channel/spatial attention, DAB, RRG, plus blur and pixel shuffle.

All modules take NCHW tensors.  Convolutions use same-size reflective padding.
"""
from __future__ import annotations

import math
from typing import Optional

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ArgumentError, ConfigError, DimensionError


class ReflectConv2d(nn.Conv2d):
    """Conv2d with reflective padding that also accepts maps no larger than the padding."""

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        p = self.padding[0] if isinstance(self.padding, tuple) else self.padding
        if self.padding_mode != "reflect" or min(x.shape[-2:]) > p:
            return super().forward(x)
        h, w = x.shape[-2:]
        x = x.index_select(-2, reflect_index(h, p).to(x.device))
        x = x.index_select(-1, reflect_index(w, p).to(x.device))
        return F.conv2d(x, self.weight, self.bias, self.stride, 0, self.dilation, self.groups)


def conv(in_ch: int, out_ch: int, kernel_size: int = 3, bias: bool = True) -> nn.Conv2d:
    return ReflectConv2d(
        in_ch, out_ch, kernel_size,
        padding=kernel_size // 2, bias=bias,
        padding_mode="reflect" if kernel_size > 1 else "zeros",
    )


def zero_(layer: nn.Conv2d) -> nn.Conv2d:
    nn.init.zeros_(layer.weight)
    if layer.bias is not None:
        nn.init.zeros_(layer.bias)
    return layer


def _check_channels(x: torch.Tensor, channels: int, who: str):
    if x.dim() != 4 or x.shape[1] != channels:
        raise DimensionError(f"{who} expects (N, {channels}, H, W), got {tuple(x.shape)}")


class ChannelAttention(nn.Module):
    """Squeeze-excitation gating: global mean -> 1x1 conv -> ReLU -> 1x1 conv -> sigmoid."""

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        if reduction < 1 or channels % reduction:
            raise ConfigError(f"channels={channels} not divisible by reduction={reduction}")
        self.channels = channels
        self.conv1 = conv(channels, channels // reduction, 1)
        self.conv2 = conv(channels // reduction, channels, 1)

    def gate(self, u: torch.Tensor) -> torch.Tensor:
        z = u.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.conv2(F.relu(self.conv1(z))))

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        _check_channels(u, self.channels, "ChannelAttention")
        return u * self.gate(u)


class SpatialAttention(nn.Module):
    """Per-site gating from the channelwise mean and max of the features."""

    def __init__(self, kernel_size: int = 3):
        super().__init__()
        self.conv = conv(2, 1, kernel_size)

    def gate(self, u: torch.Tensor) -> torch.Tensor:
        d = torch.cat([u.mean(dim=1, keepdim=True), u.amax(dim=1, keepdim=True)], dim=1)
        return torch.sigmoid(self.conv(d))

    def forward(self, u: torch.Tensor) -> torch.Tensor:
        if u.dim() != 4:
            raise DimensionError(f"SpatialAttention expects NCHW, got {tuple(u.shape)}")
        return u * self.gate(u)


class DAB(nn.Module):
    """Dual attention block: ``x + M_c([CA(U), SA(U)])`` with ``U = conv(relu(conv(x)))``.

    ``M_c`` is a zero-initialised 1x1 conv, so a fresh block is the identity.
    """

    def __init__(self, channels: int, reduction: int = 8, sa_kernel: int = 3):
        super().__init__()
        self.channels = channels
        self.conv_a = conv(channels, channels, 3)
        self.conv_b = conv(channels, channels, 3)
        self.ca = ChannelAttention(channels, reduction)
        self.sa = SpatialAttention(sa_kernel)
        self.fuse = zero_(conv(2 * channels, channels, 1))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_channels(x, self.channels, "DAB")
        u = self.conv_b(F.relu(self.conv_a(x)))
        return x + self.fuse(torch.cat([self.ca(u), self.sa(u)], dim=1))


class RRG(nn.Module):
    """Recursive residual group: ``x + conv3x3(DAB_P(...DAB_1(x)))``."""

    def __init__(self, channels: int, n_dab: int, reduction: int = 8, sa_kernel: int = 3):
        super().__init__()
        if n_dab < 1:
            raise ConfigError(f"an RRG needs at least one DAB, got {n_dab}")
        self.channels = channels
        self.body = nn.Sequential(*[DAB(channels, reduction, sa_kernel) for _ in range(n_dab)])
        self.tail = zero_(conv(channels, channels, 3))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        _check_channels(x, self.channels, "RRG")
        return x + self.tail(self.body(x))


def gaussian_kernel1d(sigma: float, dtype=torch.float64) -> torch.Tensor:
    radius = int(math.ceil(4 * sigma))
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    k = torch.exp(-0.5 * (x / sigma) ** 2)
    return (k / k.sum()).to(dtype)


def reflect_index(n: int, pad: int) -> torch.Tensor:
    """Indices of a length-``n`` axis padded by ``pad`` with whole-sample reflection.

    Unlike ``F.pad(mode='reflect')`` this allows ``pad >= n``.
    """
    idx = torch.arange(-pad, n + pad)
    if n == 1:
        return torch.zeros_like(idx)
    period = 2 * (n - 1)
    idx = torch.remainder(idx, period)
    return torch.where(idx >= n, period - idx, idx)


def gaussian_blur(img, sigma: float):
    """Separable normalised Gaussian blur over the last two axes, reflective borders.

    Accepts a tensor or numpy array of shape ``(..., H, W)``; returns the same type.
    """
    if not sigma > 0:
        raise ArgumentError(f"sigma must be > 0, got {sigma}")
    as_numpy = isinstance(img, np.ndarray)
    x = torch.from_numpy(img) if as_numpy else img
    if not torch.is_floating_point(x):
        x = x.double()
    k = gaussian_kernel1d(sigma, x.dtype).to(x.device)
    r = (k.numel() - 1) // 2
    h, w = x.shape[-2:]
    lead = x.shape[:-2]
    x = x.reshape(-1, 1, h, w)
    x = x.index_select(2, reflect_index(h, r).to(x.device))
    x = F.conv2d(x, k.view(1, 1, -1, 1))
    x = x.index_select(3, reflect_index(w, r).to(x.device))
    x = F.conv2d(x, k.view(1, 1, 1, -1))
    x = x.reshape(*lead, h, w)
    return x.numpy() if as_numpy else x


def pixel_shuffle_up(f: torch.Tensor, k: int) -> torch.Tensor:
    """Rearrange ``(N, C*k*k, H, W)`` into ``(N, C, k*H, k*W)``."""
    if f.dim() != 4 or f.shape[1] % (k * k):
        raise DimensionError(f"channels of {tuple(f.shape)} not divisible by {k * k}")
    return F.pixel_shuffle(f, k)


def pixel_shuffle_down(f: torch.Tensor, k: int) -> torch.Tensor:
    """Inverse of :func:`pixel_shuffle_up`."""
    if f.dim() != 4 or f.shape[2] % k or f.shape[3] % k:
        raise DimensionError(f"spatial size of {tuple(f.shape)} not divisible by {k}")
    return F.pixel_unshuffle(f, k)


def count_params(module: nn.Module, trainable_only: bool = True) -> int:
    return sum(p.numel() for p in module.parameters() if p.requires_grad or not trainable_only)


def dab_param_formula(c: int, reduction: int = 8, sa_kernel: int = 3) -> int:
    """Closed-form parameter count of one DAB (weights + biases)."""
    cr = c // reduction
    body = 2 * (9 * c * c + c)
    ca = (c * cr + cr) + (cr * c + c)
    sa = sa_kernel * sa_kernel * 2 + 1
    fuse = 2 * c * c + c
    return body + ca + sa + fuse


def rrg_param_formula(c: int, n_dab: int, reduction: int = 8, sa_kernel: int = 3) -> int:
    return n_dab * dab_param_formula(c, reduction, sa_kernel) + 9 * c * c + c


def reinit_(module: nn.Module, generator: Optional[torch.Generator] = None, scale: float = 0.5):
    """Fill every parameter with uniform noise; used to break zero-init symmetry in tests."""
    with torch.no_grad():
        for p in module.parameters():
            p.uniform_(-scale, scale, generator=generator)
    return module
