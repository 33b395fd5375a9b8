"""Library-level implementations behind the CLI verbs."""
from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import torch

from . import bayer
from .data import read_srgb, write_srgb
from .errors import ArgumentError, ConfigError, DataError, DimensionError
from .models import CycleISP, Denoiser
from .noise import NoiseParams, noise_level_map
from .objectives import psnr, ssim


@torch.no_grad()
def color_match(source: np.ndarray, target: np.ndarray, model: CycleISP) -> np.ndarray:
    """Render ``source``'s structure with ``target``'s colours.

    Both are registered ``(3, H, W)`` sRGB images of the same size.  The
    source goes to RAW through RGB2RAW and comes back through RAW2RGB with
    the target as colour reference.
    """
    if source.shape != target.shape:
        raise DimensionError(f"source {source.shape} and target {target.shape} must match")
    src = torch.as_tensor(np.asarray(source, np.float32)).unsqueeze(0)
    tgt = torch.as_tensor(np.asarray(target, np.float32)).unsqueeze(0)
    model.eval()
    _, _, out = model(src, color_ref=tgt)
    return out[0].numpy()


def mean_color_offset(img: np.ndarray, ref: np.ndarray) -> float:
    """Mean over channels of the absolute difference of per-channel means."""
    return float(np.mean(np.abs(img.reshape(3, -1).mean(1) - ref.reshape(3, -1).mean(1))))


@torch.no_grad()
def denoise_array(x: np.ndarray, model: Denoiser, params: Optional[NoiseParams] = None) -> np.ndarray:
    """Denoise one packed ``(4, h, w)`` raw (needs ``params``) or ``(3, H, W)`` sRGB image."""
    mode = model.config.mode
    t = torch.as_tensor(np.asarray(x, np.float32)).unsqueeze(0)
    if mode == "raw":
        if params is None:
            raise ArgumentError("raw-mode denoising needs noise parameters (--shot/--read or sidecar)")
        nmap = noise_level_map(t, params)
        out = model(t, nmap)
    else:
        out = model(t)
    return out[0].numpy()


def _raw_params(meta: Dict, shot: Optional[float], read: Optional[float]) -> Optional[NoiseParams]:
    if shot is not None and read is not None:
        return NoiseParams(shot, read)
    noise = meta.get("noise", meta)
    if "shot" in noise and "read" in noise:
        return NoiseParams(float(noise["shot"]), float(noise["read"]))
    return None


def denoise_file(input_path, output_path, model: Denoiser, mode: str, reference=None,
                 shot: Optional[float] = None, read: Optional[float] = None) -> Optional[Dict]:
    """Denoise an image file; returns a metrics dict when a reference is given."""
    if model.config.mode != mode:
        raise ConfigError(f"checkpoint is a {model.config.mode} denoiser, --mode asked for {mode}")
    input_path, output_path = Path(input_path), Path(output_path)
    if mode == "raw":
        raw = bayer.load_mosaic(input_path)
        meta = json.loads(input_path.with_suffix(".json").read_text())
        params = _raw_params(meta, shot, read)
        if params is None:
            raise ArgumentError("raw-mode denoising needs noise parameters (--shot/--read or sidecar 'noise')")
        packed = bayer.pack(raw).data
        out = bayer.unpack(bayer.PackedRaw(denoise_array(packed, model, params)))
        bayer.save_mosaic(out, output_path)
        den, ref = bayer.pack(out).data, None
        if reference is not None:
            ref = bayer.pack(bayer.load_mosaic(reference)).data
    else:
        img = read_srgb(input_path)
        den = denoise_array(img, model)
        write_srgb(output_path, den)
        # score what was actually written (8-bit formats quantise)
        den = read_srgb(output_path)
        ref = read_srgb(reference) if reference is not None else None
    if ref is None:
        return None
    if ref.shape != den.shape:
        raise DimensionError(f"reference {ref.shape} does not match output {den.shape}")
    return {"psnr": psnr(den, ref), "ssim": ssim(den, ref)}


def eval_pairs(folder, model: Denoiser) -> List[Dict]:
    """Denoise every pair in a folder (see :func:`cycleisp.synth.load_pairs`) and score it.

    Returns one row per pair; :func:`aggregate` gives the mean row.
    """
    from .synth import load_pairs

    folder = Path(folder)
    pairs = load_pairs(folder)
    names = sorted(p.name for p in folder.iterdir() if p.is_dir() and (p / "clean.npy").exists())
    rows = []
    for name, pair in zip(names, pairs):
        if pair.kind != model.config.mode:
            raise ConfigError(f"pair {name} is {pair.kind} but the denoiser is {model.config.mode}")
        den = denoise_array(pair.noisy, model, pair.noise_params)
        rows.append({
            "name": name,
            "psnr": psnr(den, pair.clean),
            "ssim": ssim(den, pair.clean),
            "psnr_noisy": psnr(pair.noisy, pair.clean),
        })
    return rows


def aggregate(rows: List[Dict]) -> Dict:
    if not rows:
        raise DataError("no rows to aggregate")
    keys = [k for k in rows[0] if k != "name"]
    return {"name": "mean", **{k: float(np.mean([r[k] for r in rows])) for k in keys}}


def write_table(rows: List[Dict], path) -> Path:
    """CSV with one row per image and a final ``mean`` row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    agg = aggregate(rows)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows + [agg]:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
    return path


def read_table(path) -> List[Dict]:
    with open(path, newline="") as fh:
        return [{k: (v if k == "name" else float(v)) for k, v in r.items()} for r in csv.DictReader(fh)]


def write_color_match(source_path, target_path, output_path, model: CycleISP) -> Dict:
    src, tgt = read_srgb(source_path), read_srgb(target_path)
    out = np.clip(color_match(src, tgt, model), 0, 1)
    write_srgb(output_path, out)
    return {"offset_before": mean_color_offset(src, tgt), "offset_after": mean_color_offset(out, tgt)}
