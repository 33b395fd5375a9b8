"""Synthetic clean/noisy pair generation through a trained cycle model."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, List, Optional

import numpy as np
import torch

from . import bayer
from .errors import DataError, DimensionError
from .models import CycleISP
from .noise import NoiseParams, NoiseSampling, inject_noise, noise_level_map


@dataclass
class PairSample:
    clean: np.ndarray  # raw: packed (4, h, w); srgb: (3, H, W)
    noisy: np.ndarray
    kind: str  # "raw" | "srgb"
    noise_params: Optional[NoiseParams] = None
    provenance: str = "synthetic"

    def __post_init__(self):
        if self.clean.shape != self.noisy.shape:
            raise DimensionError(f"clean {self.clean.shape} and noisy {self.noisy.shape} differ")
        if self.provenance == "synthetic" and self.noise_params is None:
            raise DataError("synthetic pairs must carry their noise parameters")

    def noise_map(self, params: Optional[NoiseParams] = None) -> np.ndarray:
        """4-channel noise level map of the *noisy* signal (what a denoiser can observe)."""
        params = params or self.noise_params
        if params is None:
            raise DataError("pair has no noise parameters to build a noise map from")
        return noise_level_map(self.noisy, params)


def _as_batch(srgb) -> torch.Tensor:
    x = torch.as_tensor(np.asarray(srgb, dtype=np.float32))
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.shape[1] != 3:
        raise DimensionError(f"expected (3,H,W) or (N,3,H,W) sRGB, got {tuple(x.shape)}")
    return x


@torch.no_grad()
def synth_raw_pairs(srgb_clean, model: CycleISP, rng: np.random.Generator,
                    params: Optional[NoiseParams] = None,
                    sampling: Optional[NoiseSampling] = None) -> List[PairSample]:
    """sRGB -> RGB2RAW -> (clean, clean + shot/read noise), both packed RGGB.

    Without fixed ``params`` each image gets its own draw from ``sampling``.
    """
    sampling = sampling or NoiseSampling()
    x = _as_batch(srgb_clean)
    model.eval()
    _, raw = model.rgb2raw(x)
    out = []
    for i in range(raw.shape[0]):
        p = params if params is not None else sampling.sample(rng)
        clean = raw[i].numpy().astype(np.float64)
        noisy = inject_noise(clean, p, rng)
        packed_c = bayer.pack(bayer.RawMosaic(clean, "RGGB")).data
        packed_n = bayer.pack(bayer.RawMosaic(noisy, "RGGB")).data
        out.append(PairSample(packed_c.astype(np.float32), packed_n.astype(np.float32), "raw", p))
    return out


@torch.no_grad()
def synth_srgb_pairs(srgb_clean, model: CycleISP, rng: np.random.Generator,
                     params: Optional[NoiseParams] = None,
                     sampling: Optional[NoiseSampling] = None) -> List[PairSample]:
    """Clean and noisy passes through the same RAW2RGB weights, noise switched off/on."""
    sampling = sampling or NoiseSampling()
    x = _as_batch(srgb_clean)
    model.eval()
    out = []
    for i in range(x.shape[0]):
        xi = x[i:i + 1]
        p = params if params is not None else sampling.sample(rng)
        _, _, clean = model(xi)
        _, _, noisy = model(xi, p, rng)
        out.append(PairSample(clean[0].numpy(), noisy[0].numpy(), "srgb", p))
    return out


def synthesize(images: Iterable[np.ndarray], model: CycleISP, rng: np.random.Generator,
               kind: str = "raw", params: Optional[NoiseParams] = None,
               sampling: Optional[NoiseSampling] = None) -> Iterator[PairSample]:
    fn = synth_raw_pairs if kind == "raw" else synth_srgb_pairs
    for img in images:
        yield from fn(img, model, rng, params, sampling)


def save_pairs(folder, pairs: Iterable[PairSample], seed: Optional[int] = None) -> int:
    """One directory per pair: ``clean.npy``, ``noisy.npy``, ``meta.json``."""
    folder = Path(folder)
    n = 0
    for n, pair in enumerate(pairs, 1):
        d = folder / f"{n - 1:05d}"
        d.mkdir(parents=True, exist_ok=True)
        np.save(d / "clean.npy", pair.clean)
        np.save(d / "noisy.npy", pair.noisy)
        meta = {"kind": pair.kind, "provenance": pair.provenance}
        if pair.noise_params is not None:
            meta.update(pair.noise_params.to_record(seed))
        (d / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return n


def load_pairs(folder) -> List[PairSample]:
    folder = Path(folder)
    if not folder.is_dir():
        raise DataError(f"{folder} is not a directory")
    out = []
    for d in sorted(p for p in folder.iterdir() if p.is_dir()):
        if not (d / "clean.npy").exists() or not (d / "noisy.npy").exists():
            continue
        meta = json.loads((d / "meta.json").read_text()) if (d / "meta.json").exists() else {}
        params = NoiseParams.from_record(meta) if "shot" in meta else None
        clean, noisy = np.load(d / "clean.npy"), np.load(d / "noisy.npy")
        kind = meta.get("kind", "raw" if clean.shape[0] == 4 else "srgb")
        out.append(PairSample(clean, noisy, kind, params, meta.get("provenance", "real" if params is None else "synthetic")))
    if not out:
        raise DataError(f"no pairs found in {folder}")
    return out
