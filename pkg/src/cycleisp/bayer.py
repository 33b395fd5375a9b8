"""Bayer mosaic geometry: sampling, packing, pattern unification and flips.

Every operation here is a pure index manipulation and works on either numpy
arrays or torch tensors (autograd flows through mosaicking and packing).

Layout conventions (channel-first, arbitrary leading batch dims):

* full-colour image: ``(..., 3, H, W)``
* mosaic (``RawMosaic.data``): ``(..., H, W)``
* packed (``PackedRaw.data``): ``(..., 4, H/2, W/2)`` in R, G(R row), G(B row), B order
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Tuple

import numpy as np
import torch

from .errors import DimensionError, PatternError

R, G, B = 0, 1, 2


class BayerPattern(str, enum.Enum):
    RGGB = "RGGB"
    BGGR = "BGGR"
    GRBG = "GRBG"
    GBRG = "GBRG"

    @classmethod
    def parse(cls, value: Any) -> "BayerPattern":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).upper())
        except ValueError:
            raise PatternError(f"unknown Bayer pattern {value!r}") from None

    @property
    def colors(self) -> Tuple[Tuple[int, int], Tuple[int, int]]:
        """2x2 tile of colour indices, ``colors[row % 2][col % 2]``."""
        lut = {"R": R, "G": G, "B": B}
        s = self.value
        return (lut[s[0]], lut[s[1]]), (lut[s[2]], lut[s[3]])

    def color_at(self, row: int, col: int) -> int:
        return self.colors[row % 2][col % 2]

    @property
    def red_offset(self) -> Tuple[int, int]:
        """(row, col) of the red site inside the 2x2 tile."""
        idx = self.value.index("R")
        return divmod(idx, 2)

    def flipped(self, horizontal: bool, vertical: bool) -> "BayerPattern":
        """Pattern of an even-sized mosaic after flipping."""
        s = self.value
        tile = [[s[0], s[1]], [s[2], s[3]]]
        if horizontal:
            tile = [row[::-1] for row in tile]
        if vertical:
            tile = tile[::-1]
        return BayerPattern("".join(tile[0] + tile[1]))


@dataclass(frozen=True)
class RawMosaic:
    """Single-channel Bayer mosaic with an explicit pattern tag."""

    data: Any
    pattern: BayerPattern

    def __post_init__(self):
        if not isinstance(self.pattern, BayerPattern):
            object.__setattr__(self, "pattern", BayerPattern.parse(self.pattern))
        if self.data.ndim < 2:
            raise DimensionError(f"mosaic needs at least 2 dims, got shape {tuple(self.data.shape)}")
        h, w = self.data.shape[-2:]
        if h % 2 or w % 2:
            raise DimensionError(f"mosaic dimensions must be even, got {h}x{w}")

    @property
    def height(self) -> int:
        return int(self.data.shape[-2])

    @property
    def width(self) -> int:
        return int(self.data.shape[-1])


@dataclass(frozen=True)
class PackedRaw:
    """Half-resolution 4-channel RGGB packing of a mosaic."""

    data: Any

    def __post_init__(self):
        if self.data.ndim < 3 or self.data.shape[-3] != 4:
            raise DimensionError(f"packed raw must be (..., 4, h, w), got {tuple(self.data.shape)}")


def _is_torch(a) -> bool:
    return isinstance(a, torch.Tensor)


def _stack(arrays, axis: int):
    if _is_torch(arrays[0]):
        return torch.stack(arrays, dim=axis)
    return np.stack(arrays, axis=axis)


def _require_mosaic(raw) -> RawMosaic:
    if not isinstance(raw, RawMosaic):
        raise PatternError("expected a pattern-tagged RawMosaic, got an untagged array")
    return raw


def crop_even(arr, axes: Tuple[int, int] = (-2, -1)):
    """Crop the given axes to even length by dropping the trailing line.

    Dropping the trailing (not leading) line keeps the Bayer phase intact.
    """
    index = [slice(None)] * arr.ndim
    for ax in axes:
        n = arr.shape[ax]
        index[ax] = slice(0, n - n % 2)
    return arr[tuple(index)]


def mosaic(dem, pattern) -> RawMosaic:
    """Sample one colour per site of a ``(..., 3, H, W)`` image."""
    pattern = BayerPattern.parse(pattern)
    if dem.ndim < 3 or dem.shape[-3] != 3:
        raise DimensionError(f"expected (..., 3, H, W), got {tuple(dem.shape)}")
    h, w = dem.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"mosaic dimensions must be even, got {h}x{w}")
    if _is_torch(dem):
        out = dem.new_empty(dem.shape[:-3] + dem.shape[-2:])
    else:
        out = np.empty(dem.shape[:-3] + dem.shape[-2:], dtype=dem.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            c = pattern.color_at(dy, dx)
            out[..., dy::2, dx::2] = dem[..., c, dy::2, dx::2]
    return RawMosaic(out, pattern)


def unify_pattern(raw: RawMosaic) -> RawMosaic:
    """Shift the sampling grid so the mosaic starts on a red site.

    Shifting crops one leading line per offset axis and then one trailing line
    to restore even size, so a shifted axis loses two lines in total.
    """
    raw = _require_mosaic(raw)
    oy, ox = raw.pattern.red_offset
    if oy == 0 and ox == 0:
        return raw
    h, w = raw.height, raw.width
    if (oy and h <= 2) or (ox and w <= 2):
        raise DimensionError(f"mosaic {h}x{w} too small to unify {raw.pattern.value}")
    data = raw.data[..., oy : h - oy, ox : w - ox]
    return RawMosaic(data, BayerPattern.RGGB)


def unify_offsets(pattern) -> Tuple[int, int]:
    """Leading crop (rows, cols) that `unify_pattern` applies for ``pattern``."""
    return BayerPattern.parse(pattern).red_offset


def pack(raw: RawMosaic) -> PackedRaw:
    raw = unify_pattern(raw)
    d = raw.data
    chans = [d[..., 0::2, 0::2], d[..., 0::2, 1::2], d[..., 1::2, 0::2], d[..., 1::2, 1::2]]
    return PackedRaw(_stack(chans, axis=-3))


def unpack(packed: PackedRaw) -> RawMosaic:
    if not isinstance(packed, PackedRaw):
        packed = PackedRaw(packed)
    p = packed.data
    h, w = p.shape[-2:]
    shape = tuple(p.shape[:-3]) + (2 * h, 2 * w)
    out = p.new_empty(shape) if _is_torch(p) else np.empty(shape, dtype=p.dtype)
    out[..., 0::2, 0::2] = p[..., 0, :, :]
    out[..., 0::2, 1::2] = p[..., 1, :, :]
    out[..., 1::2, 0::2] = p[..., 2, :, :]
    out[..., 1::2, 1::2] = p[..., 3, :, :]
    return RawMosaic(out, BayerPattern.RGGB)


def _flip(a, axis: int):
    if _is_torch(a):
        return torch.flip(a, dims=(axis,))
    return np.flip(a, axis=axis).copy()


def bayer_flip(raw: RawMosaic, horizontal: bool = False, vertical: bool = False) -> RawMosaic:
    """Flip a mosaic and re-phase it to a valid RGGB mosaic of the flipped scene."""
    raw = _require_mosaic(raw)
    data = raw.data
    if horizontal:
        data = _flip(data, -1)
    if vertical:
        data = _flip(data, -2)
    return unify_pattern(RawMosaic(data, raw.pattern.flipped(horizontal, vertical)))


def save_mosaic(raw: RawMosaic, path, value_range: Tuple[float, float] = (0.0, 1.0)) -> Path:
    """Write ``<path>.npy`` plus a ``<path>.json`` sidecar; returns the array path."""
    raw = _require_mosaic(raw)
    data = raw.data.detach().cpu().numpy() if _is_torch(raw.data) else np.asarray(raw.data)
    if data.ndim != 2:
        raise DimensionError("only single (H, W) mosaics can be written to disk")
    path = Path(path).with_suffix(".npy")
    np.save(path, data)
    meta = {
        "height": int(data.shape[0]),
        "width": int(data.shape[1]),
        "pattern": raw.pattern.value,
        "value_range": [float(value_range[0]), float(value_range[1])],
    }
    path.with_suffix(".json").write_text(json.dumps(meta, indent=2))
    return path


def load_mosaic(path) -> RawMosaic:
    """Read a mosaic written by :func:`save_mosaic`; odd sizes are center-cropped to even."""
    path = Path(path).with_suffix(".npy")
    meta_path = path.with_suffix(".json")
    if not meta_path.exists():
        raise PatternError(f"{path} has no sidecar metadata; refusing an untagged mosaic")
    meta = json.loads(meta_path.read_text())
    data = np.load(path)
    if data.shape != (meta["height"], meta["width"]):
        raise DimensionError(f"{path}: array shape {data.shape} disagrees with sidecar")
    return RawMosaic(crop_even(data), BayerPattern.parse(meta["pattern"]))
