"""Checkpoint files: a ``.npz`` of named parameter arrays plus a JSON manifest.

The manifest records ``{kind, config, step, stage, history, checksum}``; the
checksum is a SHA-256 over every array's name, dtype, shape and bytes.
Writes go to a temporary file that is renamed into place.
"""
from __future__ import annotations

import hashlib
import json
import os
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import torch

from .config import first_mismatch, from_dict, to_dict
from .errors import ChecksumError, ConfigError, DataError
from .models import CycleConfig, CycleISP, Denoiser, DenoiserConfig

_MANIFEST_KEY = "__manifest__"


@dataclass
class Checkpoint:
    kind: str  # "cycle" | "denoiser"
    config: Dict[str, Any]
    params: Dict[str, np.ndarray]
    step: int = 0
    stage: str = ""
    history: List[str] = field(default_factory=list)
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def manifest(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "config": self.config,
            "step": self.step,
            "stage": self.stage,
            "history": list(self.history),
            "extra": self.extra,
            "checksum": params_checksum(self.params),
        }

    def build_model(self):
        """Instantiate the network described by this checkpoint and load its parameters."""
        if self.kind == "cycle":
            model = CycleISP(from_dict(self.config, CycleConfig))
        elif self.kind == "denoiser":
            model = Denoiser(from_dict(self.config, DenoiserConfig))
        else:
            raise ConfigError(f"unknown checkpoint kind {self.kind!r}")
        load_params(model, self.params)
        return model


def params_checksum(params: Dict[str, np.ndarray]) -> str:
    h = hashlib.sha256()
    for name in sorted(params):
        a = np.ascontiguousarray(params[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(repr(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def state_arrays(model: torch.nn.Module) -> Dict[str, np.ndarray]:
    return {k: v.detach().cpu().numpy().copy() for k, v in model.state_dict().items()}


def load_params(model: torch.nn.Module, params: Dict[str, np.ndarray]) -> None:
    own = model.state_dict()
    missing = sorted(set(own) - set(params))
    unexpected = sorted(set(params) - set(own))
    if missing or unexpected:
        raise ConfigError(f"parameter names differ: missing={missing[:3]} unexpected={unexpected[:3]}")
    for k, v in own.items():
        if tuple(v.shape) != tuple(params[k].shape):
            raise ConfigError(f"parameter {k}: shape {tuple(params[k].shape)} != model {tuple(v.shape)}")
    model.load_state_dict({k: torch.from_numpy(np.array(params[k])) for k in own})


def from_model(model, stage: str = "", step: int = 0, history: Optional[List[str]] = None,
               extra: Optional[Dict[str, Any]] = None) -> Checkpoint:
    if isinstance(model, CycleISP):
        kind = "cycle"
    elif isinstance(model, Denoiser):
        kind = "denoiser"
    else:
        raise ConfigError(f"cannot checkpoint {type(model).__name__}")
    return Checkpoint(kind, to_dict(model.config), state_arrays(model), step, stage,
                      list(history or []), dict(extra or {}))


def save_checkpoint(ckpt: Checkpoint, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {f"p/{k}": v for k, v in ckpt.params.items()}
    arrays[_MANIFEST_KEY] = np.frombuffer(json.dumps(ckpt.manifest, sort_keys=True).encode(), dtype=np.uint8)
    fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def load_checkpoint(path, expected_config=None, expected_kind: Optional[str] = None) -> Checkpoint:
    """Read and verify a checkpoint.

    ``expected_config`` (dataclass or dict) must match the stored config exactly;
    the error names the first differing field.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint {path} does not exist")
    try:
        with np.load(path, allow_pickle=False) as z:
            manifest = json.loads(bytes(z[_MANIFEST_KEY]).decode())
            params = {k[2:]: z[k] for k in z.files if k.startswith("p/")}
    except (zipfile.BadZipFile, KeyError, ValueError, OSError, UnicodeDecodeError) as exc:
        raise ChecksumError(f"{path}: unreadable or corrupt checkpoint ({exc})") from exc
    if params_checksum(params) != manifest.get("checksum"):
        raise ChecksumError(f"{path}: parameter checksum mismatch")
    ckpt = Checkpoint(manifest["kind"], manifest["config"], params, manifest.get("step", 0),
                      manifest.get("stage", ""), manifest.get("history", []), manifest.get("extra", {}))
    if expected_kind is not None and ckpt.kind != expected_kind:
        raise ConfigError(f"{path}: expected a {expected_kind} checkpoint, found {ckpt.kind}")
    if expected_config is not None:
        want = expected_config if isinstance(expected_config, dict) else to_dict(expected_config)
        bad = first_mismatch(want, ckpt.config)
        if bad:
            raise ConfigError(f"{path}: config mismatch at field {bad!r}")
    return ckpt


def combine_cycle(rgb2raw: Checkpoint, raw2rgb: Checkpoint) -> Checkpoint:
    """Merge independently trained branches into one cycle checkpoint."""
    for c in (rgb2raw, raw2rgb):
        if c.kind != "cycle":
            raise ConfigError("combine_cycle needs two cycle checkpoints")
    bad = first_mismatch(rgb2raw.config, raw2rgb.config)
    if bad:
        raise ConfigError(f"branch checkpoints disagree on config field {bad!r}")
    params = {k: (rgb2raw if k.startswith("rgb2raw.") else raw2rgb).params[k] for k in rgb2raw.params}
    history = list(dict.fromkeys(list(rgb2raw.history) + list(raw2rgb.history)))
    return Checkpoint("cycle", rgb2raw.config, params, rgb2raw.step + raw2rgb.step, "combined", history)
