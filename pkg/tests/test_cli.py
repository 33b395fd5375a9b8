import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from cycleisp import bayer
from cycleisp.apps import read_table
from cycleisp.checkpoint import from_model, save_checkpoint
from cycleisp.cli import main
from cycleisp.data import read_srgb, write_srgb
from cycleisp.models import Denoiser, DenoiserConfig
from cycleisp.noise import NoiseParams
from cycleisp.objectives import PSNR_CAP
from cycleisp.synth import PairSample, save_pairs
from cycleisp.synthetic import make_isp_pairs

from helpers import tiny_cycle


@pytest.fixture
def srgb_denoiser(tmp_path):
    return save_checkpoint(from_model(Denoiser(DenoiserConfig(1, 1, 8, 4, "srgb"))), tmp_path / "den_srgb.ckpt")


@pytest.fixture
def raw_denoiser(tmp_path):
    return save_checkpoint(from_model(Denoiser(DenoiserConfig(1, 1, 8, 4, "raw"))), tmp_path / "den_raw.ckpt")


@pytest.fixture
def cycle_ckpt(tmp_path):
    return save_checkpoint(from_model(tiny_cycle(seed=1), history=["rgb2raw", "raw2rgb", "joint_finetune"]),
                           tmp_path / "cycle.ckpt")


@pytest.fixture
def image(tmp_path):
    return write_srgb(tmp_path / "in.png", np.random.default_rng(0).random((3, 16, 20)))


def test_help_lists_flags_and_defaults(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["denoise", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--config", "--set", "--seed", "--checkpoint", "--input", "--output", "--reference", "--mode"):
        assert flag in out
    assert "default: srgb" in out


def test_top_level_help_names_all_verbs(capsys):
    with pytest.raises(SystemExit):
        main(["--help"])
    out = capsys.readouterr().out
    for verb in ("train", "synth", "denoise", "eval", "color-match", "count-params"):
        assert verb in out


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


class TestDenoise:
    def test_identity_checkpoint_hits_psnr_cap(self, tmp_path, srgb_denoiser, image, capsys):
        out = tmp_path / "out.png"
        code = main(["denoise", "--checkpoint", str(srgb_denoiser), "--input", str(image), "--output", str(out),
                     "--reference", str(image)])
        assert code == 0
        rec = json.loads(capsys.readouterr().out)
        assert rec["metrics"]["psnr"] == PSNR_CAP
        assert rec["metrics"]["ssim"] == pytest.approx(1.0)
        assert np.array_equal(read_srgb(out), read_srgb(image))
        assert json.loads((tmp_path / "out.png.metrics.json").read_text())["metrics"]["psnr"] == PSNR_CAP

    def test_no_reference_no_metrics(self, tmp_path, srgb_denoiser, image, capsys):
        code = main(["denoise", "--checkpoint", str(srgb_denoiser), "--input", str(image),
                     "--output", str(tmp_path / "o.png")])
        assert code == 0
        assert "metrics" not in json.loads(capsys.readouterr().out)
        assert not (tmp_path / "o.png.metrics.json").exists()

    def test_outputs_are_idempotent(self, tmp_path, srgb_denoiser, image):
        for name in ("a.png", "b.png"):
            main(["denoise", "--checkpoint", str(srgb_denoiser), "--input", str(image), "--output", str(tmp_path / name)])
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()

    def test_raw_mode(self, tmp_path, raw_denoiser, capsys):
        raw = bayer.RawMosaic(np.random.default_rng(0).random((8, 8)), "BGGR")
        path = bayer.save_mosaic(raw, tmp_path / "noisy.npy")
        # no noise parameters anywhere
        assert main(["denoise", "--mode", "raw", "--checkpoint", str(raw_denoiser), "--input", str(path),
                     "--output", str(tmp_path / "d.npy")]) == 6
        code = main(["denoise", "--mode", "raw", "--checkpoint", str(raw_denoiser), "--input", str(path),
                     "--output", str(tmp_path / "d.npy"), "--shot", "0.01", "--read", "0.001"])
        assert code == 0
        out = bayer.load_mosaic(tmp_path / "d.npy")
        assert out.pattern == bayer.BayerPattern.RGGB
        np.testing.assert_array_equal(out.data, bayer.unify_pattern(raw).data.astype(np.float32))

    def test_raw_mode_reads_sidecar_noise(self, tmp_path, raw_denoiser):
        raw = bayer.RawMosaic(np.random.default_rng(0).random((8, 8)), "RGGB")
        path = bayer.save_mosaic(raw, tmp_path / "noisy.npy")
        meta = json.loads(path.with_suffix(".json").read_text())
        meta["noise"] = {"shot": 0.01, "read": 0.001}
        path.with_suffix(".json").write_text(json.dumps(meta))
        assert main(["denoise", "--mode", "raw", "--checkpoint", str(raw_denoiser), "--input", str(path),
                     "--output", str(tmp_path / "d.npy"), "--reference", str(path)]) == 0

    def test_mode_mismatch_is_config_error(self, tmp_path, srgb_denoiser, image):
        assert main(["denoise", "--mode", "raw", "--checkpoint", str(srgb_denoiser), "--input", str(image),
                     "--output", str(tmp_path / "o.png")]) == 3

    def test_missing_arguments(self, srgb_denoiser):
        assert main(["denoise", "--checkpoint", str(srgb_denoiser)]) == 6

    def test_missing_or_corrupt_checkpoint(self, tmp_path, image):
        assert main(["denoise", "--checkpoint", str(tmp_path / "none.ckpt"), "--input", str(image),
                     "--output", str(tmp_path / "o.png")]) == 5
        (tmp_path / "bad.ckpt").write_bytes(b"garbage")
        assert main(["denoise", "--checkpoint", str(tmp_path / "bad.ckpt"), "--input", str(image),
                     "--output", str(tmp_path / "o.png")]) == 5

    def test_reference_size_mismatch(self, tmp_path, srgb_denoiser, image):
        ref = write_srgb(tmp_path / "ref.png", np.zeros((3, 8, 8)))
        assert main(["denoise", "--checkpoint", str(srgb_denoiser), "--input", str(image),
                     "--output", str(tmp_path / "o.png"), "--reference", str(ref)]) == 4


class TestEval:
    def test_identity_on_clean_pairs(self, tmp_path, raw_denoiser, capsys):
        rng = np.random.default_rng(0)
        pairs = []
        for _ in range(5):
            x = rng.random((4, 6, 6)).astype(np.float32)
            pairs.append(PairSample(x, x.copy(), "raw", NoiseParams(0.0, 0.0)))
        save_pairs(tmp_path / "pairs", pairs)
        out = tmp_path / "table.csv"
        assert main(["eval", "--checkpoint", str(raw_denoiser), "--input", str(tmp_path / "pairs"),
                     "--output", str(out)]) == 0
        rows = read_table(out)
        assert len(rows) == 6 and rows[-1]["name"] == "mean"
        assert rows[-1]["psnr"] == PSNR_CAP
        assert json.loads(capsys.readouterr().out)["psnr"] == PSNR_CAP

    def test_aggregate_is_row_mean(self, tmp_path, raw_denoiser):
        rng = np.random.default_rng(1)
        pairs = []
        for _ in range(7):
            x = rng.random((4, 8, 8)).astype(np.float32)
            n = (x + 0.05 * rng.standard_normal(x.shape)).astype(np.float32)
            pairs.append(PairSample(x, n, "raw", NoiseParams(0.01, 0.001)))
        save_pairs(tmp_path / "pairs", pairs)
        out = tmp_path / "t.csv"
        main(["eval", "--checkpoint", str(raw_denoiser), "--input", str(tmp_path / "pairs"), "--output", str(out)])
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        body, agg = rows[:-1], rows[-1]
        assert len(body) == 7
        for key in ("psnr", "ssim", "psnr_noisy"):
            assert abs(float(agg[key]) - np.mean([float(r[key]) for r in body])) < 1e-9

    def test_empty_folder(self, tmp_path, raw_denoiser):
        (tmp_path / "empty").mkdir()
        assert main(["eval", "--checkpoint", str(raw_denoiser), "--input", str(tmp_path / "empty"),
                     "--output", str(tmp_path / "t.csv")]) == 5

    def test_kind_mismatch(self, tmp_path, srgb_denoiser):
        x = np.zeros((4, 4, 4), np.float32)
        save_pairs(tmp_path / "pairs", [PairSample(x, x, "raw", NoiseParams(0, 0))])
        assert main(["eval", "--checkpoint", str(srgb_denoiser), "--input", str(tmp_path / "pairs"),
                     "--output", str(tmp_path / "t.csv")]) == 3


class TestColorMatch:
    def test_output_shape_and_offsets(self, tmp_path, cycle_ckpt, image, capsys):
        tgt = write_srgb(tmp_path / "tgt.png", read_srgb(image) * np.array([1.2, 1.0, 0.8])[:, None, None])
        out = tmp_path / "m.png"
        assert main(["color-match", "--checkpoint", str(cycle_ckpt), "--input", str(image), "--target", str(tgt),
                     "--output", str(out)]) == 0
        assert read_srgb(out).shape == read_srgb(image).shape
        rec = json.loads(capsys.readouterr().out)
        assert set(rec) == {"offset_before", "offset_after"}

    def test_size_mismatch(self, tmp_path, cycle_ckpt, image):
        tgt = write_srgb(tmp_path / "tgt.png", np.zeros((3, 8, 8)))
        assert main(["color-match", "--checkpoint", str(cycle_ckpt), "--input", str(image), "--target", str(tgt),
                     "--output", str(tmp_path / "m.png")]) == 4

    def test_requires_target(self, tmp_path, cycle_ckpt, image):
        assert main(["color-match", "--checkpoint", str(cycle_ckpt), "--input", str(image),
                     "--output", str(tmp_path / "m.png")]) == 6

    def test_needs_cycle_checkpoint(self, tmp_path, srgb_denoiser, image):
        assert main(["color-match", "--checkpoint", str(srgb_denoiser), "--input", str(image),
                     "--target", str(image), "--output", str(tmp_path / "m.png")]) == 3


class TestCountParams:
    def test_defaults(self, capsys):
        assert main(["count-params"]) == 0
        rep = json.loads(capsys.readouterr().out)
        assert rep["dab_formula"] == 83_227 and rep["rrg_formula"] == 702_744
        assert rep["denoiser"] == 9 * 8 * 64 + 64 + 4 * 702_744 + 9 * 64 * 4 + 4
        assert rep["published_denoiser_params"] == 2.6e6
        assert rep["cycle"] == rep["rgb2raw"] + rep["raw2rgb"] + rep["color_correction"]

    def test_from_checkpoint_and_overrides(self, cycle_ckpt, capsys):
        assert main(["count-params", "--checkpoint", str(cycle_ckpt)]) == 0
        assert "cycle" in json.loads(capsys.readouterr().out)
        assert main(["count-params", "--set", "denoiser.channels=16"]) == 0
        assert json.loads(capsys.readouterr().out)["denoiser_width"] == 16

    def test_bad_override(self):
        assert main(["count-params", "--set", "denoiser.mode=rgb"]) == 3


class TestTrainAndSynth:
    def _isp_folder(self, root, n=4, size=24):
        for i, p in enumerate(make_isp_pairs(n, size, np.random.default_rng(0), wb_jitter=0.1)):
            d = root / f"s{i}"
            d.mkdir(parents=True)
            np.save(d / "rgb.npy", p["rgb"])
            bayer.save_mosaic(bayer.RawMosaic(p["raw"], "RGGB"), d / "raw.npy")
        return root

    def test_train_then_synth_then_denoiser(self, tmp_path, capsys):
        data = self._isp_folder(tmp_path / "isp")
        common = ["--preset", "toy", "--set", "train.epochs=1", "--set", "train.crop_size=16",
                  "--set", "dataset.split=[1.0, 0.0, 0.0]"]
        assert main(["train", "--stage", "rgb2raw", "--input", str(data), "--output", str(tmp_path / "r1")] + common) == 0
        assert main(["train", "--stage", "raw2rgb", "--input", str(data), "--output", str(tmp_path / "r2")] + common) == 0
        assert main(["train", "--stage", "joint_finetune", "--input", str(data), "--output", str(tmp_path / "j"),
                     "--checkpoint", str(tmp_path / "r2" / "final.ckpt"),
                     "--checkpoint", str(tmp_path / "r1" / "final.ckpt")] + common) == 0
        assert (tmp_path / "j" / "config.yaml").exists()
        assert (tmp_path / "j" / "metrics.jsonl").read_text().strip()

        imgs = tmp_path / "imgs"
        for i in range(3):
            write_srgb(imgs / f"{i}.png", np.random.default_rng(i).random((3, 24, 24)))
        assert main(["synth", "--checkpoint", str(tmp_path / "j" / "final.ckpt"), "--input", str(imgs),
                     "--output", str(tmp_path / "pairs"), "--set", "dataset.crop_size=16"] + common[:2]) == 0
        assert len(list((tmp_path / "pairs").iterdir())) == 3
        assert main(["train", "--stage", "denoiser_raw", "--input", str(tmp_path / "pairs"),
                     "--output", str(tmp_path / "d")] + common) == 0
        capsys.readouterr()
        assert main(["eval", "--checkpoint", str(tmp_path / "d" / "final.ckpt"), "--input", str(tmp_path / "pairs"),
                     "--output", str(tmp_path / "t.csv")]) == 0

    def test_joint_without_branches_is_config_error(self, tmp_path):
        data = self._isp_folder(tmp_path / "isp")
        assert main(["train", "--stage", "joint_finetune", "--input", str(data), "--output", str(tmp_path / "o"),
                     "--preset", "toy", "--set", "train.epochs=1"]) == 3

    def test_missing_data_folder(self, tmp_path):
        assert main(["train", "--stage", "rgb2raw", "--input", str(tmp_path / "none"),
                     "--output", str(tmp_path / "o")]) == 5

    def test_synth_needs_both_noise_values(self, tmp_path, cycle_ckpt):
        assert main(["synth", "--checkpoint", str(cycle_ckpt), "--input", str(tmp_path), "--output",
                     str(tmp_path / "p"), "--shot", "0.01"]) == 6


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cycleisp", "count-params", "--preset", "toy"],
                         capture_output=True, text=True, timeout=120)
    assert res.returncode == 0
    assert json.loads(res.stdout)["denoiser_width"] == 16
