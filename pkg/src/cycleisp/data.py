"""Image I/O, dataset folders, corpus preparation and Bayer-consistent augmentation.

Folder conventions
------------------
``srgb_folder``
    any ``*.png|*.jpg|*.jpeg|*.tif|*.bmp|*.npy`` files (``.npy`` is float (3,H,W) or (H,W,3)).
``isp_pair_folder``
    one directory per scene holding ``rgb.png`` (or ``rgb.npy``) and a mosaic
    ``raw.npy`` + ``raw.json`` sidecar.
``raw_pair_folder``
    one directory per scene holding mosaics ``clean.npy``/``noisy.npy`` (+ sidecars)
    and optionally ``clean_srgb.*``/``noisy_srgb.*``; a ``meta.json`` may carry
    ``{"shot": .., "read": ..}``.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
from PIL import Image

from . import bayer
from .blocks import gaussian_blur
from .config import DatasetSpec
from .errors import DataError, DimensionError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


def read_srgb(path) -> np.ndarray:
    """Decode an image to float32 ``(3, H, W)`` in [0, 1], cropped to even size."""
    path = Path(path)
    if path.suffix == ".npy":
        arr = np.load(path).astype(np.float32)
        if arr.ndim == 3 and arr.shape[-1] == 3 and arr.shape[0] != 3:
            arr = arr.transpose(2, 0, 1)
    else:
        with Image.open(path) as im:
            im = im.convert("RGB")
            arr = np.asarray(im, dtype=np.float32).transpose(2, 0, 1) / 255.0
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise DimensionError(f"{path}: expected a 3-channel image, got {arr.shape}")
    return np.ascontiguousarray(bayer.crop_even(arr))


def write_srgb(path, img) -> Path:
    """Write ``(3, H, W)`` in [0, 1]; ``.npy`` keeps floats, anything else is 8-bit lossless."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    img = np.asarray(img, dtype=np.float32)
    if path.suffix == ".npy":
        np.save(path, img)
    else:
        u8 = np.round(np.clip(img, 0, 1) * 255).astype(np.uint8).transpose(1, 2, 0)
        Image.fromarray(u8).save(path)
    return path


def _find_image(scene: Path, stem: str) -> Optional[Path]:
    for suf in (".npy",) + IMAGE_SUFFIXES:
        p = scene / f"{stem}{suf}"
        if p.exists():
            return p
    return None


def list_images(root) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES + (".npy",))


def split_items(items: Sequence, ratios: Sequence[float], seed: int = 0) -> Tuple[list, list, list]:
    """Seeded shuffle then train/val/test split by ``ratios``."""
    order = np.random.default_rng(seed).permutation(len(items))
    n = len(items)
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    picked = [items[i] for i in order]
    return picked[:n_train], picked[n_train:n_train + n_val], picked[n_train + n_val:]


def _scene_dirs(root) -> List[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root} is not a directory")
    return sorted(p for p in root.iterdir() if p.is_dir())


def load_isp_pairs(root) -> List[Dict]:
    """Scenes of ``{"rgb": (3,H,W), "raw": RawMosaic}``; raw is unified to RGGB with rgb cropped alongside."""
    out = []
    for scene in _scene_dirs(root):
        rgb_path = _find_image(scene, "rgb")
        if rgb_path is None or not (scene / "raw.npy").exists():
            log.warning("skipping %s: missing rgb or raw", scene)
            continue
        try:
            rgb = read_srgb(rgb_path)
            raw = bayer.load_mosaic(scene / "raw.npy")
        except Exception as exc:  # corrupt scene: skip, keep going
            log.warning("skipping %s: %s", scene, exc)
            continue
        out.append(align_pair(rgb, raw))
    if not out:
        raise DataError(f"no usable scenes under {root}")
    return out


def align_pair(rgb: np.ndarray, raw: bayer.RawMosaic) -> Dict:
    if tuple(rgb.shape[-2:]) != (raw.height, raw.width):
        raise DimensionError(f"rgb {rgb.shape[-2:]} and raw {(raw.height, raw.width)} differ in size")
    oy, ox = bayer.unify_offsets(raw.pattern)
    rgb = rgb[:, oy:raw.height - oy, ox:raw.width - ox]
    return {"rgb": np.ascontiguousarray(rgb), "raw": bayer.unify_pattern(raw)}


def load_raw_pairs(root) -> List[Dict]:
    """Real noisy/clean scenes: ``{"raw_clean", "raw_noisy"[, "rgb_clean", "rgb_noisy"], "meta"}``."""
    out = []
    for scene in _scene_dirs(root):
        try:
            clean = bayer.load_mosaic(scene / "clean.npy")
            noisy = bayer.load_mosaic(scene / "noisy.npy")
        except Exception as exc:
            log.warning("skipping %s: %s", scene, exc)
            continue
        if clean.pattern != noisy.pattern or clean.data.shape != noisy.data.shape:
            log.warning("skipping %s: clean/noisy mosaics disagree", scene)
            continue
        item = {"raw_clean": clean, "raw_noisy": noisy, "scene": scene.name}
        meta_path = scene / "meta.json"
        item["meta"] = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        for key in ("clean_srgb", "noisy_srgb"):
            p = _find_image(scene, key)
            if p is not None:
                item["rgb_" + key.split("_")[0]] = read_srgb(p)
        out.append(item)
    if not out:
        raise DataError(f"no usable scenes under {root}")
    return out


def save_raw_pair_scene(folder, raw_clean: bayer.RawMosaic, raw_noisy: bayer.RawMosaic,
                        rgb_clean=None, rgb_noisy=None, meta: Optional[dict] = None) -> Path:
    folder = Path(folder)
    folder.mkdir(parents=True, exist_ok=True)
    bayer.save_mosaic(raw_clean, folder / "clean.npy")
    bayer.save_mosaic(raw_noisy, folder / "noisy.npy")
    if rgb_clean is not None:
        write_srgb(folder / "clean_srgb.npy", rgb_clean)
    if rgb_noisy is not None:
        write_srgb(folder / "noisy_srgb.npy", rgb_noisy)
    if meta is not None:
        (folder / "meta.json").write_text(json.dumps(meta, indent=2))
    return folder


# --- crops and flips -----------------------------------------------------------

def random_crop_offsets(shape_hw: Tuple[int, int], size: int, rng: np.random.Generator) -> Tuple[int, int]:
    """Even top-left offset of a ``size`` crop that lies fully inside ``shape_hw``."""
    h, w = shape_hw
    if size > h or size > w:
        raise DimensionError(f"crop {size} larger than image {h}x{w}")
    oy = 2 * int(rng.integers(0, (h - size) // 2 + 1))
    ox = 2 * int(rng.integers(0, (w - size) // 2 + 1))
    return oy, ox


def flip_rgb_like_raw(rgb: np.ndarray, pattern: bayer.BayerPattern, horizontal: bool, vertical: bool):
    """Apply to an aligned colour image exactly the flip + re-phase crop that `bayer_flip` applies."""
    if horizontal:
        rgb = rgb[..., ::-1]
    if vertical:
        rgb = rgb[..., ::-1, :]
    oy, ox = pattern.flipped(horizontal, vertical).red_offset
    h, w = rgb.shape[-2:]
    return np.ascontiguousarray(rgb[..., oy:h - oy, ox:w - ox])


def augment_pair(rgb: np.ndarray, raw: bayer.RawMosaic, rng: np.random.Generator):
    """Random horizontal/vertical flip applied consistently to an aligned (rgb, RGGB raw) pair."""
    h, v = bool(rng.integers(2)), bool(rng.integers(2))
    if not (h or v):
        return rgb, raw
    return flip_rgb_like_raw(rgb, raw.pattern, h, v), bayer.bayer_flip(raw, h, v)


def prepare_corpus(spec: DatasetSpec, rng: np.random.Generator,
                   paths: Optional[Sequence[Path]] = None) -> Iterator[np.ndarray]:
    """Yield blurred, randomly cropped (and flipped) ``(3, s, s)`` crops from an sRGB folder.

    Unreadable files are skipped with a warning; an empty corpus is fatal.
    """
    paths = list(paths) if paths is not None else list_images(spec.root)
    images = []
    for p in paths:
        try:
            img = read_srgb(p)
        except Exception as exc:
            log.warning("skipping unreadable image %s: %s", p, exc)
            continue
        if min(img.shape[-2:]) < spec.crop_size:
            log.warning("skipping %s: smaller than crop size %d", p, spec.crop_size)
            continue
        images.append(gaussian_blur(img.astype(np.float64), spec.blur_sigma).astype(np.float32))
    if not images:
        raise DataError(f"empty corpus: no usable images in {spec.root or 'given paths'}")
    for img in images:
        for _ in range(spec.crops_per_image):
            oy, ox = random_crop_offsets(img.shape[-2:], spec.crop_size, rng)
            crop = img[:, oy:oy + spec.crop_size, ox:ox + spec.crop_size]
            if spec.flips:
                if rng.integers(2):
                    crop = crop[..., ::-1]
                if rng.integers(2):
                    crop = crop[..., ::-1, :]
            yield np.ascontiguousarray(crop)
