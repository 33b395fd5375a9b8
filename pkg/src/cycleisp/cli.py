"""Command-line interface: ``cycleisp <verb> [options]``.

Exit codes: 0 success, 2 usage error, 3 config error, 4 dimension/pattern
error, 5 data error (missing/corrupt input, checksum), 6 argument error,
7 non-finite loss during training.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from . import apps, checkpoint as ckpt_io
from .blocks import count_params, dab_param_formula, rrg_param_formula
from .config import STAGES, DatasetSpec, load_config, preset, save_config
from .data import load_isp_pairs, load_raw_pairs, prepare_corpus, split_items
from .errors import (ArgumentError, ConfigError, DataError, DimensionError, NonFiniteLossError,
                     PatternError)
from .models import CycleISP, Denoiser
from .synth import load_pairs, save_pairs, synthesize
from .train import MetricsLogger, run_training

log = logging.getLogger("cycleisp")

EXIT_CODES = [
    (ConfigError, 3),
    (DimensionError, 4),
    (PatternError, 4),
    (DataError, 5),
    (ArgumentError, 6),
    (NonFiniteLossError, 7),
]

PUBLISHED_DENOISER_PARAMS = 2.6e6


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show a default only when there is one worth showing and the help text does not already."""

    def _get_help_string(self, action):
        text = action.help or ""
        if "default" in text or action.default in (None, [], False, argparse.SUPPRESS):
            return text
        return super()._get_help_string(action)


def _common(p: argparse.ArgumentParser, *, checkpoint=True, io=True):
    p.add_argument("--config", help="YAML config file (default: built-in defaults)")
    p.add_argument("--preset", choices=["full", "toy"],
                   help="start from the published full-size (full) or CPU-sized (toy) settings (default: none)")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override a config field, e.g. train.lr.initial=1e-3 (repeatable; default: none)")
    p.add_argument("--seed", type=int, default=None, help="random seed (default: train.seed from config, 0)")
    if checkpoint:
        p.add_argument("--checkpoint", action="append", default=[],
                       help="checkpoint file; train accepts two branch checkpoints and merges them (default: none)")
    if io:
        p.add_argument("--input", help="input file or folder (required)")
        p.add_argument("--output", help="output file or folder (required)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cycleisp", description=__doc__.splitlines()[0],
                                 epilog="exit codes: 0 ok, 2 usage, 3 config, 4 dimension/pattern, "
                                        "5 data/checksum, 6 argument, 7 non-finite loss",
                                 formatter_class=_HelpFormatter)
    ap.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = ap.add_subparsers(dest="verb", required=True)
    fmt = _HelpFormatter

    p = sub.add_parser("train", help="run one training stage", formatter_class=fmt)
    _common(p)
    p.add_argument("--stage", choices=STAGES, help="stage to run (default: train.stage)")
    p.add_argument("--metrics", help="JSON-lines metrics file (default: <output dir>/metrics.jsonl)")

    p = sub.add_parser("synth", help="synthesise clean/noisy pairs from an sRGB folder", formatter_class=fmt)
    _common(p)
    p.add_argument("--mode", choices=["raw", "srgb"], default="raw", help="kind of pairs to synthesise")
    p.add_argument("--shot", type=float, help="fixed shot-noise factor (default: sampled per image)")
    p.add_argument("--read", type=float, help="fixed read-noise factor (default: sampled per image)")

    p = sub.add_parser("denoise", help="denoise one image", formatter_class=fmt)
    _common(p)
    p.add_argument("--mode", choices=["raw", "srgb"], default="srgb",
                   help="raw: Bayer mosaic (.npy + .json sidecar); srgb: image file")
    p.add_argument("--reference", help="clean reference; enables PSNR/SSIM output (default: none)")
    p.add_argument("--shot", type=float, help="shot-noise factor for the raw noise map (default: from the input sidecar)")
    p.add_argument("--read", type=float, help="read-noise factor for the raw noise map (default: from the input sidecar)")
    p.add_argument("--metrics", help="metrics JSON path (default: <output>.metrics.json)")

    p = sub.add_parser("eval", help="score a denoiser on a pair folder", formatter_class=fmt)
    _common(p)

    p = sub.add_parser("color-match", help="recolour a stereo source view to match its target", formatter_class=fmt)
    _common(p)
    p.add_argument("--target", help="registered target view used as colour reference (required)")

    p = sub.add_parser("count-params", help="report learnable parameter counts", formatter_class=fmt)
    _common(p, io=False)
    return ap


def _config(args):
    base = None
    if getattr(args, "preset", None):
        stage = getattr(args, "stage", None) or "rgb2raw"
        base = preset(args.preset, stage)
    cfg = load_config(args.config, args.overrides, base=base)
    if args.seed is not None:
        cfg.train.seed = args.seed
    return cfg


def _require(args, *names):
    missing = [n for n in names if not getattr(args, n, None)]
    if missing:
        raise ArgumentError("missing required option(s): " + ", ".join("--" + m.replace("_", "-") for m in missing))


def _one_checkpoint(args, kind: str):
    if len(args.checkpoint) != 1:
        raise ArgumentError("exactly one --checkpoint is required")
    return ckpt_io.load_checkpoint(args.checkpoint[0], expected_kind=kind)


def cmd_train(args) -> int:
    cfg = _config(args)
    stage = args.stage or cfg.train.stage
    cfg.train.stage = stage
    _require(args, "input", "output")
    init = None
    if len(args.checkpoint) == 2:
        a, b = (ckpt_io.load_checkpoint(p) for p in args.checkpoint)
        if "rgb2raw" not in a.history:
            a, b = b, a
        init = ckpt_io.combine_cycle(a, b)
    elif len(args.checkpoint) == 1:
        init = ckpt_io.load_checkpoint(args.checkpoint[0])
    elif len(args.checkpoint) > 2:
        raise ArgumentError("at most two --checkpoint files")
    root = Path(args.input)
    if stage in ("rgb2raw", "raw2rgb", "joint_finetune"):
        items = load_isp_pairs(root)
    elif stage == "noisy_finetune":
        items = load_raw_pairs(root)
    else:
        items = load_pairs(root)
    train, val, _ = split_items(items, cfg.dataset.split, cfg.train.seed)
    if not train:
        raise DataError(f"train split of {root} is empty")
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out / "config.yaml")
    metrics = MetricsLogger(args.metrics or out / "metrics.jsonl")
    try:
        ck = run_training(stage, train, cfg, init=init, val_data=val or None, metrics=metrics, out_dir=out)
    finally:
        metrics.close()
    print(json.dumps({"stage": stage, "steps": ck.step, "checkpoint": str(out / "final.ckpt")}))
    return 0


def cmd_synth(args) -> int:
    cfg = _config(args)
    _require(args, "input", "output")
    ck = _one_checkpoint(args, "cycle")
    model = ck.build_model()
    spec = DatasetSpec(**{**cfg.dataset.__dict__, "root": args.input})
    rng = np.random.default_rng(cfg.train.seed)
    params = None
    if (args.shot is None) != (args.read is None):
        raise ArgumentError("--shot and --read must be given together")
    if args.shot is not None:
        from .noise import NoiseParams
        params = NoiseParams(args.shot, args.read)
    crops = prepare_corpus(spec, rng)
    n = save_pairs(args.output, synthesize(crops, model, rng, args.mode, params, cfg.noise), seed=cfg.train.seed)
    print(json.dumps({"pairs": n, "output": args.output}))
    return 0


def cmd_denoise(args) -> int:
    _require(args, "input", "output")
    ck = _one_checkpoint(args, "denoiser")
    model = ck.build_model()
    metrics = apps.denoise_file(args.input, args.output, model, args.mode, args.reference, args.shot, args.read)
    record = {"input": args.input, "output": args.output}
    if metrics is not None:
        record["metrics"] = metrics
        path = Path(args.metrics) if args.metrics else Path(str(args.output) + ".metrics.json")
        path.write_text(json.dumps(record, indent=2))
    print(json.dumps(record))
    return 0


def cmd_eval(args) -> int:
    _require(args, "input", "output")
    model = _one_checkpoint(args, "denoiser").build_model()
    rows = apps.eval_pairs(args.input, model)
    apps.write_table(rows, args.output)
    print(json.dumps(apps.aggregate(rows)))
    return 0


def cmd_color_match(args) -> int:
    _require(args, "input", "target", "output")
    model = _one_checkpoint(args, "cycle").build_model()
    print(json.dumps(apps.write_color_match(args.input, args.target, args.output, model)))
    return 0


def cmd_count_params(args) -> int:
    if args.checkpoint:
        ck = _one_checkpoint(args, None)
        model = ck.build_model()
        nets = {ck.kind: model}
        cfg = None
    else:
        cfg = _config(args)
        nets = {"cycle": CycleISP(cfg.cycle), "denoiser": Denoiser(cfg.denoiser)}
    report = {}
    for name, net in nets.items():
        report[name] = count_params(net)
        if isinstance(net, CycleISP):
            report["rgb2raw"] = count_params(net.rgb2raw)
            report["raw2rgb"] = count_params(net.raw2rgb) - count_params(net.raw2rgb.color)
            report["color_correction"] = count_params(net.raw2rgb.color)
        if isinstance(net, Denoiser):
            c = net.config
            report["denoiser_width"] = c.channels
            report["dab_formula"] = dab_param_formula(c.channels, c.reduction)
            report["rrg_formula"] = rrg_param_formula(c.channels, c.n_dab, c.reduction)
            report["published_denoiser_params"] = PUBLISHED_DENOISER_PARAMS
    print(json.dumps(report, indent=2))
    return 0


COMMANDS = {
    "train": cmd_train,
    "synth": cmd_synth,
    "denoise": cmd_denoise,
    "eval": cmd_eval,
    "color-match": cmd_color_match,
    "count-params": cmd_count_params,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except tuple(cls for cls, _ in EXIT_CODES) as exc:
        for cls, code in EXIT_CODES:
            if isinstance(exc, cls):
                print(f"error: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
