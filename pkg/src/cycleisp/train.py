"""Staged training: the two branches, joint and noisy fine-tuning, and the denoisers.

Every stage is a deterministic function of ``(config.train.seed, config, data)``.
"""
from __future__ import annotations

import copy
import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, TextIO, Union

import numpy as np
import torch

from . import bayer
from .checkpoint import Checkpoint, from_model, load_params, save_checkpoint
from .config import CYCLE_STAGES, Config, first_mismatch, to_dict
from .data import flip_rgb_like_raw, random_crop_offsets
from .errors import ConfigError, DataError, NonFiniteLossError
from .models import CycleISP, Denoiser
from .noise import NoiseResidue, inject_noise, noise_level_map
from .objectives import loss_joint, loss_r2s, loss_s2r, psnr
from .synth import PairSample

log = logging.getLogger(__name__)

REQUIRED_HISTORY = {
    "joint_finetune": ("rgb2raw", "raw2rgb"),
    "noisy_finetune": ("joint_finetune",),
}


class MetricsLogger:
    """Writes one JSON object per line to a file or stream."""

    def __init__(self, target: Union[str, Path, TextIO, None] = None):
        self.records: List[dict] = []
        self._own = False
        if target is None:
            self._fh = None
        elif isinstance(target, (str, Path)):
            Path(target).parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(target, "a")
            self._own = True
        else:
            self._fh = target

    def emit(self, **record):
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._own:
            self._fh.close()


def _t(a) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(a, dtype=np.float32))


def _mosaic(raw) -> bayer.RawMosaic:
    if isinstance(raw, bayer.RawMosaic):
        return bayer.unify_pattern(raw)
    return bayer.RawMosaic(np.asarray(raw), bayer.BayerPattern.RGGB)


class _Batcher:
    """Draws augmented, equally sized crops for one stage."""

    def __init__(self, stage: str, data: Sequence, cfg: Config, rng: np.random.Generator,
                 noise_rng: np.random.Generator, normalised: bool = False):
        self.stage = stage
        self.cfg = cfg.train
        self.sampling = cfg.noise
        self.rng = rng
        self.noise_rng = noise_rng
        self.items = list(data) if normalised else [self._normalise(d) for d in data]
        if not self.items:
            raise DataError(f"stage {stage} got no training data")

    def _normalise(self, d):
        st = self.stage
        if st in ("rgb2raw", "raw2rgb", "joint_finetune"):
            raw = d["raw"]
            if isinstance(raw, bayer.RawMosaic) and raw.pattern != bayer.BayerPattern.RGGB:
                oy, ox = raw.pattern.red_offset
                rgb = d["rgb"][:, oy:raw.height - oy, ox:raw.width - ox]
                return {"rgb": np.asarray(rgb, np.float32), "raw": bayer.unify_pattern(raw)}
            return {"rgb": np.asarray(d["rgb"], np.float32), "raw": _mosaic(raw)}
        if st == "noisy_finetune":
            missing = [k for k in ("raw_clean", "raw_noisy", "rgb_clean", "rgb_noisy") if k not in d]
            if missing:
                raise DataError(f"noisy_finetune needs real RAW+sRGB pairs; missing {missing}")
            clean, noisy = d["raw_clean"], d["raw_noisy"]
            pattern = clean.pattern if isinstance(clean, bayer.RawMosaic) else bayer.BayerPattern.RGGB
            oy, ox = pattern.red_offset
            crop = lambda a: np.asarray(a, np.float32)[:, oy:a.shape[-2] - oy, ox:a.shape[-1] - ox]
            return {"rgb": crop(d["rgb_clean"]), "rgb_noisy": crop(d["rgb_noisy"]),
                    "raw": _mosaic(clean), "raw_noisy": _mosaic(noisy)}
        if not isinstance(d, PairSample):
            raise DataError(f"{st} trains on PairSample objects, got {type(d).__name__}")
        want = "raw" if st == "denoiser_raw" else "srgb"
        if d.kind != want:
            raise DataError(f"{st} needs {want} pairs, got a {d.kind} pair")
        return d

    def __len__(self):
        return len(self.items)

    def _region(self, hw, size):
        """Crop size (+2 lines of slack for a Bayer flip when the image allows it)."""
        slack = 2 if self.cfg.flips and min(hw) >= size + 2 else 0
        oy, ox = random_crop_offsets(hw, size + slack, self.rng)
        return oy, ox, slack

    def _flip_mosaics(self, mosaics: List[np.ndarray], size: int, slack: int):
        if slack:
            h, v = bool(self.rng.integers(2)), bool(self.rng.integers(2))
            if h or v:
                # re-phasing trims 2 lines only along flipped axes; trim the rest of the slack here
                return [bayer.bayer_flip(bayer.RawMosaic(m, "RGGB"), h, v).data[:size, :size]
                        for m in mosaics], (h, v)
        return [m[:size, :size] for m in mosaics], (False, False)

    def cycle_item(self, it, size):
        raw = it["raw"].data
        oy, ox, slack = self._region(raw.shape, size)
        s = size + slack
        raws = [raw[oy:oy + s, ox:ox + s]]
        if "raw_noisy" in it:
            raws.append(it["raw_noisy"].data[oy:oy + s, ox:ox + s])
        rgbs = [it["rgb"][:, oy:oy + s, ox:ox + s]]
        if "rgb_noisy" in it:
            rgbs.append(it["rgb_noisy"][:, oy:oy + s, ox:ox + s])
        raws, (h, v) = self._flip_mosaics(raws, size, slack)
        if h or v:
            rgbs = [flip_rgb_like_raw(r, bayer.BayerPattern.RGGB, h, v) for r in rgbs]
        rgbs = [r[:, :size, :size] for r in rgbs]
        return raws, rgbs

    def denoise_item(self, pair: PairSample, size):
        if pair.kind == "srgb":
            oy, ox = random_crop_offsets(pair.clean.shape[-2:], size, self.rng)
            c = pair.clean[:, oy:oy + size, ox:ox + size]
            n = pair.noisy[:, oy:oy + size, ox:ox + size]
            if self.cfg.flips:
                if self.rng.integers(2):
                    c, n = c[..., ::-1], n[..., ::-1]
                if self.rng.integers(2):
                    c, n = c[..., ::-1, :], n[..., ::-1, :]
            return c, n, None
        clean = bayer.unpack(bayer.PackedRaw(pair.clean)).data
        noisy = bayer.unpack(bayer.PackedRaw(pair.noisy)).data
        oy, ox, slack = self._region(clean.shape, size)
        s = size + slack
        (c, n), _ = self._flip_mosaics([clean[oy:oy + s, ox:ox + s], noisy[oy:oy + s, ox:ox + s]], size, slack)
        c = bayer.pack(bayer.RawMosaic(c, "RGGB")).data
        params = pair.noise_params
        if self.cfg.resample_noise and pair.provenance == "synthetic":
            params = self.sampling.sample(self.noise_rng)
            n = inject_noise(c.astype(np.float64), params, self.noise_rng).astype(np.float32)
        else:
            n = bayer.pack(bayer.RawMosaic(n, "RGGB")).data
        if params is None:
            raise DataError("raw denoiser training needs noise parameters for the noise level map")
        return c, n, noise_level_map(n, params)

    def batch(self, idx: Sequence[int]) -> Dict[str, torch.Tensor]:
        size = self.cfg.crop_size
        if self.stage in CYCLE_STAGES:
            size = min(size, *[min(self.items[i]["raw"].data.shape) for i in idx])
            size -= size % 2
            parts = [self.cycle_item(self.items[i], size) for i in idx]
            out = {"raw": _t(np.stack([p[0][0] for p in parts])),
                   "rgb": _t(np.stack([p[1][0] for p in parts]))}
            if self.stage == "noisy_finetune":
                out["raw_noisy"] = _t(np.stack([p[0][1] for p in parts]))
                out["rgb_noisy"] = _t(np.stack([p[1][1] for p in parts]))
            return out
        full = [self.items[i] for i in idx]
        if self.stage == "denoiser_raw":
            size = min(size, *[2 * min(p.clean.shape[-2:]) for p in full])
        else:
            size = min(size, *[min(p.clean.shape[-2:]) for p in full])
        size -= size % 2
        parts = [self.denoise_item(p, size) for p in full]
        out = {"clean": _t(np.stack([p[0] for p in parts])), "noisy": _t(np.stack([p[1] for p in parts]))}
        if self.stage == "denoiser_raw":
            out["noise_map"] = _t(np.stack([p[2] for p in parts]))
        return out


def _check_history(stage: str, init: Optional[Checkpoint]):
    need = REQUIRED_HISTORY.get(stage)
    if not need:
        return
    have = set(init.history) if init is not None else set()
    missing = [s for s in need if s not in have]
    if missing:
        raise ConfigError(f"stage {stage} requires a checkpoint that completed {missing}")


def build_model(stage: str, cfg: Config, init: Optional[Checkpoint]):
    if stage in CYCLE_STAGES:
        model = CycleISP(cfg.cycle)
        kind, want = "cycle", to_dict(cfg.cycle)
    else:
        model = Denoiser(cfg.denoiser)
        kind, want = "denoiser", to_dict(cfg.denoiser)
    if init is not None:
        if init.kind != kind:
            raise ConfigError(f"stage {stage} cannot start from a {init.kind} checkpoint")
        bad = first_mismatch(want, init.config)
        if bad:
            raise ConfigError(f"initial checkpoint config mismatch at field {bad!r}")
        load_params(model, init.params)
    return model


def trainable_parameters(stage: str, model) -> List[torch.nn.Parameter]:
    if stage == "rgb2raw":
        return list(model.rgb2raw.parameters())
    if stage == "raw2rgb":
        return list(model.raw2rgb.parameters())
    return list(model.parameters())


def compute_loss(stage: str, model, batch: Dict[str, torch.Tensor], cfg: Config):
    """Returns ``(LossValue, prediction, target)`` for one batch."""
    tc = cfg.train
    if stage == "rgb2raw":
        _, raw_hat = model.rgb2raw(batch["rgb"])
        return loss_s2r(raw_hat, batch["raw"], tc.epsilon), raw_hat, batch["raw"]
    if stage == "raw2rgb":
        packed = bayer.pack(bayer.RawMosaic(batch["raw"], "RGGB")).data
        rgb_hat = model.raw2rgb(packed, batch["rgb"])
        return loss_r2s(rgb_hat, batch["rgb"]), rgb_hat, batch["rgb"]
    if stage == "joint_finetune":
        raw_hat, _, rgb_hat = model(batch["rgb"])
        return loss_joint(raw_hat, batch["raw"], rgb_hat, batch["rgb"], tc.beta, tc.epsilon), rgb_hat, batch["rgb"]
    if stage == "noisy_finetune":
        residue = NoiseResidue(batch["raw_noisy"] - batch["raw"])
        raw_hat, _, rgb_hat = model(batch["rgb"], residue)
        target = batch["rgb_noisy"]
        return loss_joint(raw_hat, batch["raw"], rgb_hat, target, tc.beta, tc.epsilon), rgb_hat, target
    out = model(batch["noisy"], batch.get("noise_map"))
    return loss_r2s(out, batch["clean"]), out, batch["clean"]


def _dump_nonfinite(out_dir, stage, step, loss, model):
    rec = {
        "stage": stage, "step": step,
        "loss": {k: float(v.detach()) for k, v in loss.components.items()},
        "param_norms": {n: float(p.detach().norm()) for n, p in model.named_parameters()},
    }
    if out_dir is not None:
        path = Path(out_dir) / f"nonfinite_step{step}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(rec, indent=2))
    log.error("non-finite loss at step %d: %s", step, rec["loss"])
    return rec


def run_training(stage: str, data: Sequence, config: Config, init: Optional[Checkpoint] = None,
                 val_data: Optional[Sequence] = None, metrics: Optional[MetricsLogger] = None,
                 out_dir=None) -> Checkpoint:
    """Train one stage and return the final checkpoint.

    ``data`` per stage: cycle stages take dicts ``{"rgb", "raw"}`` (noisy
    fine-tuning additionally ``raw_noisy``/``rgb_noisy``, keyed as produced by
    :func:`cycleisp.data.load_raw_pairs`); denoiser stages take
    :class:`~cycleisp.synth.PairSample` lists.  With ``val_data`` and
    ``out_dir`` the best-by-validation-PSNR weights are kept in ``best.ckpt``.
    """
    if stage != config.train.stage:
        config = copy.deepcopy(config)
        config.train.stage = stage
    tc = config.train
    _check_history(stage, init)
    torch.manual_seed(tc.seed)
    rng = np.random.default_rng(tc.seed)
    noise_rng = np.random.default_rng([tc.seed, 1])
    model = build_model(stage, config, init)
    batcher = _Batcher(stage, data, config, rng, noise_rng)
    val = _Batcher(stage, val_data, config, np.random.default_rng([tc.seed, 2]),
                   np.random.default_rng([tc.seed, 3])) if val_data else None
    params = trainable_parameters(stage, model)
    for p in model.parameters():
        p.requires_grad_(False)
    for p in params:
        p.requires_grad_(True)
    opt = torch.optim.Adam(params, lr=tc.lr.initial, betas=(tc.optimizer.beta1, tc.optimizer.beta2))
    metrics = metrics or MetricsLogger()
    steps_per_epoch = tc.steps_per_epoch or math.ceil(len(batcher) / tc.batch_size)
    history = list(init.history) if init is not None else []
    step = 0
    best_psnr = -math.inf
    model.train()
    for epoch in range(tc.epochs):
        lr = tc.lr.lr_at(epoch)
        for g in opt.param_groups:
            g["lr"] = lr
        order = rng.permutation(len(batcher))
        for k in range(steps_per_epoch):
            idx = [int(order[(k * tc.batch_size + j) % len(order)]) for j in range(tc.batch_size)]
            batch = batcher.batch(idx)
            loss, pred, target = compute_loss(stage, model, batch, config)
            if not torch.isfinite(loss.value):
                _dump_nonfinite(out_dir, stage, step, loss, model)
                raise NonFiniteLossError(f"{stage}: non-finite loss at step {step}")
            opt.zero_grad(set_to_none=True)
            loss.value.backward()
            opt.step()
            if tc.log_every and step % tc.log_every == 0:
                metrics.emit(step=step, epoch=epoch, stage=stage, lr=lr, loss=loss.as_record(),
                             psnr=psnr(pred.detach().clamp(0, 1), target))
            step += 1
        if val is not None and (epoch + 1) % tc.val_every == 0:
            score = evaluate(stage, model, val, config)
            metrics.emit(step=step, epoch=epoch, stage=stage, val_psnr=score)
            model.train()
            if out_dir is not None:
                ck = from_model(model, stage, step, history + [stage])
                save_checkpoint(ck, Path(out_dir) / "last.ckpt")
                if score > best_psnr:
                    best_psnr = score
                    save_checkpoint(ck, Path(out_dir) / "best.ckpt")
    model.eval()
    ckpt = from_model(model, stage, step, history + [stage])
    if out_dir is not None:
        save_checkpoint(ckpt, Path(out_dir) / "final.ckpt")
    return ckpt


@torch.no_grad()
def evaluate(stage: str, model, batcher_or_data, config: Config) -> float:
    """Mean PSNR of the stage's prediction over the largest square crop of each item, unaugmented.

    Crop positions come from a fixed seed, so repeated calls score the same pixels.
    """
    ready = isinstance(batcher_or_data, _Batcher)
    items = batcher_or_data.items if ready else batcher_or_data
    cfg = copy.deepcopy(config)
    cfg.train.flips = False
    cfg.train.resample_noise = False
    cfg.train.stage = stage
    b = _Batcher(stage, items, cfg, np.random.default_rng(0), np.random.default_rng(1), normalised=ready)
    model.eval()
    scores = []
    for i in range(len(b)):
        it = b.items[i]
        if stage in CYCLE_STAGES:
            cfg.train.crop_size = min(it["raw"].data.shape)
        else:
            hw = it.clean.shape[-2:]
            cfg.train.crop_size = 2 * min(hw) if stage == "denoiser_raw" else min(hw)
        batch = b.batch([i])
        _, pred, target = compute_loss(stage, model, batch, cfg)
        scores.append(psnr(pred.clamp(0, 1) if stage != "rgb2raw" else pred, target))
    return float(np.mean(scores))
