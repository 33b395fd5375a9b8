"""Configuration tree, presets and YAML persistence.

A config file mirrors :class:`Config`; any omitted key keeps its default, and
``--set a.b.c=value`` style overrides are applied on top.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional

import yaml

from .errors import ArgumentError, ConfigError
from .models import BranchConfig, ColorConfig, CycleConfig, DenoiserConfig
from .noise import NoiseSampling

STAGES = ("rgb2raw", "raw2rgb", "joint_finetune", "noisy_finetune", "denoiser_raw", "denoiser_srgb")
CYCLE_STAGES = STAGES[:4]
DENOISER_STAGES = STAGES[4:]


@dataclass
class OptimizerConfig:
    kind: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999


@dataclass
class ScheduleConfig:
    """Step decay: lr = initial * gamma ** (number of milestones passed), milestones in epochs."""

    initial: float = 1e-4
    milestones: List[int] = field(default_factory=lambda: [800])
    gamma: float = 0.1

    def lr_at(self, epoch: int) -> float:
        return self.initial * self.gamma ** sum(epoch >= m for m in self.milestones)


@dataclass
class TrainConfig:
    stage: str = "rgb2raw"
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    lr: ScheduleConfig = field(default_factory=ScheduleConfig)
    epochs: int = 1200
    batch_size: int = 4
    # 0 -> ceil(len(data) / batch_size)
    steps_per_epoch: int = 0
    crop_size: int = 128
    flips: bool = True
    seed: int = 0
    beta: float = 0.5
    epsilon: float = 1e-4
    # denoiser stages: redraw noise parameters and noise for every batch
    resample_noise: bool = True
    log_every: int = 50
    val_every: int = 1

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown stage {self.stage!r}; expected one of {STAGES}")
        if self.crop_size % 2:
            raise ConfigError(f"crop_size must be even, got {self.crop_size}")
        if self.optimizer.kind != "adam":
            raise ConfigError(f"only the adam optimizer is supported, got {self.optimizer.kind!r}")


@dataclass
class DatasetSpec:
    root: str = ""
    # srgb_folder | isp_pair_folder | raw_pair_folder
    kind: str = "srgb_folder"
    split: List[float] = field(default_factory=lambda: [0.9, 0.05, 0.05])
    crop_size: int = 128
    flips: bool = True
    blur_sigma: float = 1.0
    crops_per_image: int = 1

    def __post_init__(self):
        if self.kind not in ("srgb_folder", "isp_pair_folder", "raw_pair_folder"):
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if abs(sum(self.split) - 1.0) > 1e-9 or any(s < 0 for s in self.split):
            raise ConfigError(f"split ratios must be >= 0 and sum to 1, got {self.split}")
        if self.crop_size % 2:
            raise ConfigError(f"crop_size must be even, got {self.crop_size}")


@dataclass
class Config:
    cycle: CycleConfig = field(default_factory=CycleConfig)
    denoiser: DenoiserConfig = field(default_factory=DenoiserConfig)
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    noise: NoiseSampling = field(default_factory=NoiseSampling)


# schedules per stage as published; toy presets scale them down
PUBLISHED_SCHEDULES: Dict[str, Dict[str, Any]] = {
    "rgb2raw": dict(epochs=1200, batch_size=4, lr=dict(initial=1e-4, milestones=[800], gamma=0.1)),
    "raw2rgb": dict(epochs=1200, batch_size=4, lr=dict(initial=1e-4, milestones=[800], gamma=0.1)),
    "joint_finetune": dict(epochs=600, batch_size=1, lr=dict(initial=1e-5, milestones=[], gamma=0.1)),
    "noisy_finetune": dict(epochs=600, batch_size=1, lr=dict(initial=1e-5, milestones=[], gamma=0.1)),
    "denoiser_raw": dict(epochs=65, batch_size=16, lr=dict(initial=1e-4, milestones=[25, 50], gamma=0.1)),
    "denoiser_srgb": dict(epochs=65, batch_size=16, lr=dict(initial=1e-4, milestones=[25, 50], gamma=0.1)),
}

TOY_SCHEDULES: Dict[str, Dict[str, Any]] = {
    "rgb2raw": dict(epochs=1000, batch_size=4, crop_size=64, lr=dict(initial=2e-3, milestones=[700], gamma=0.1)),
    "raw2rgb": dict(epochs=1500, batch_size=8, crop_size=64, lr=dict(initial=2e-3, milestones=[1000], gamma=0.1)),
    "joint_finetune": dict(epochs=300, batch_size=8, crop_size=64, lr=dict(initial=2e-4, milestones=[], gamma=0.1)),
    "noisy_finetune": dict(epochs=100, batch_size=4, crop_size=64, lr=dict(initial=1e-4, milestones=[], gamma=0.1)),
    "denoiser_raw": dict(epochs=1500, batch_size=8, crop_size=32, lr=dict(initial=1e-3, milestones=[1000], gamma=0.1)),
    "denoiser_srgb": dict(epochs=1500, batch_size=8, crop_size=32, lr=dict(initial=1e-3, milestones=[1000], gamma=0.1)),
}


def toy_cycle_config(channels: int = 16) -> CycleConfig:
    return CycleConfig(
        rgb2raw=BranchConfig(n_rrg=2, n_dab=2, channels=channels),
        raw2rgb=BranchConfig(n_rrg=2, n_dab=2, channels=channels),
        color_corr=ColorConfig(n_rrg=1, n_dab=2, channels=channels, blur_sigma=12.0),
    )


def toy_denoiser_config(mode: str = "raw", channels: int = 16) -> DenoiserConfig:
    return DenoiserConfig(n_rrg=2, n_dab=2, channels=channels, mode=mode)


def preset(name: str, stage: str) -> Config:
    """``name`` is ``"full"`` (published values) or ``"toy"`` (CPU-sized)."""
    if stage not in STAGES:
        raise ConfigError(f"unknown stage {stage!r}")
    if name == "full":
        cfg = Config()
        sched = PUBLISHED_SCHEDULES[stage]
    elif name == "toy":
        mode = "srgb" if stage == "denoiser_srgb" else "raw"
        cfg = Config(cycle=toy_cycle_config(), denoiser=toy_denoiser_config(mode))
        sched = TOY_SCHEDULES[stage]
        cfg.dataset.crop_size = sched["crop_size"]
    else:
        raise ConfigError(f"unknown preset {name!r}; expected 'full' or 'toy'")
    if stage == "denoiser_srgb":
        cfg.denoiser.mode = "srgb"
    return apply_overrides(cfg, {"train": dict(sched, stage=stage)})


# --- dict conversion ---------------------------------------------------------

def to_dict(cfg) -> Dict[str, Any]:
    return dataclasses.asdict(cfg)


def _build(cls, data: Any, path: str):
    if not dataclasses.is_dataclass(cls):
        return data
    if not isinstance(data, dict):
        raise ConfigError(f"{path or 'config'}: expected a mapping, got {data!r}")
    hints = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in hints:
            raise ConfigError(f"unknown config key {path + key!r}")
        ftype = hints[key].type
        tname = ftype if isinstance(ftype, str) else getattr(ftype, "__name__", "")
        sub = _DATACLASS_TYPES.get(tname)
        kwargs[key] = _build(sub, value, f"{path}{key}.") if sub else _coerce(tname, value, path + key)
    try:
        return cls(**kwargs)
    except ArgumentError as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _coerce(tname: str, value: Any, where: str):
    # YAML 1.1 reads "1e-4" as a string; numeric fields accept it anyway
    try:
        if tname == "float" and not isinstance(value, bool):
            return float(value)
        if tname == "int" and not isinstance(value, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(float(value)) if isinstance(value, str) else int(value)
        if tname == "bool" and not isinstance(value, bool):
            raise ValueError(value)
        if tname == "List[float]":
            return [float(v) for v in value]
        if tname == "List[int]":
            return [int(v) for v in value]
    except (TypeError, ValueError):
        raise ConfigError(f"config field {where!r}: cannot use {value!r} as {tname}") from None
    return value


_DATACLASS_TYPES = {
    c.__name__: c for c in (
        OptimizerConfig, ScheduleConfig, TrainConfig, DatasetSpec, Config,
        BranchConfig, ColorConfig, CycleConfig, DenoiserConfig, NoiseSampling,
    )
}


def from_dict(data: Dict[str, Any], cls=Config):
    return _build(cls, data, "")


def _merge(base: Dict[str, Any], upd: Dict[str, Any]) -> Dict[str, Any]:
    out = dict(base)
    for k, v in upd.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def apply_overrides(cfg: Config, overrides: Dict[str, Any]) -> Config:
    return from_dict(_merge(to_dict(cfg), overrides), type(cfg))


def parse_set(items: List[str]) -> Dict[str, Any]:
    """``["train.lr.initial=1e-3", ...]`` -> nested dict (values parsed as YAML scalars)."""
    out: Dict[str, Any] = {}
    for item in items:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        node = out
        parts = key.strip().split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = yaml.safe_load(raw)
    return out


def load_config(path: Optional[str] = None, overrides: Optional[List[str]] = None,
                base: Optional[Config] = None) -> Config:
    cfg = base or Config()
    if path:
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path} must be a mapping at top level")
        cfg = apply_overrides(cfg, data)
    if overrides:
        cfg = apply_overrides(cfg, parse_set(overrides))
    return cfg


def save_config(cfg: Config, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=False))


def first_mismatch(a: Dict[str, Any], b: Dict[str, Any], prefix: str = "") -> Optional[str]:
    """Dotted name of the first differing field between two config dicts, or None."""
    for key in list(a) + [k for k in b if k not in a]:
        if key not in a or key not in b:
            return prefix + key
        va, vb = a[key], b[key]
        if isinstance(va, dict) and isinstance(vb, dict):
            sub = first_mismatch(va, vb, f"{prefix}{key}.")
            if sub:
                return sub
        elif va != vb:
            return prefix + key
    return None
