import json

import numpy as np
import pytest

from hierseg.cli import main
from hierseg.scanio import load_scan


def run(*argv):
    return main(list(argv))


def phantom_dir(tmp_path, n=4, extents="32,32,32", seed=0):
    out = tmp_path / "data"
    code = run("phantom", "-n", str(n), "--seed", str(seed), "--out", str(out),
               "--set", f"phantom.extents={extents}", "--set", "phantom.blobs=2")
    assert code == 0
    return out


class TestPhantomCommand:
    def test_writes_pairs_and_config_echo(self, tmp_path):
        out = phantom_dir(tmp_path, n=4)
        scans = sorted(p.name for p in out.glob("*.nii.gz"))
        assert len(scans) == 8
        assert (out / "resolved.cfg").exists()

    def test_rerun_is_byte_identical(self, tmp_path):
        out = phantom_dir(tmp_path, n=2)
        before = {p.name: p.read_bytes() for p in out.glob("*.nii.gz")}
        assert run("phantom", "-n", "2", "--seed", "0", "--out", str(out),
                   "--set", "phantom.extents=32,32,32", "--set", "phantom.blobs=2") == 0
        after = {p.name: p.read_bytes() for p in out.glob("*.nii.gz")}
        assert before == after

    def test_zero_count_succeeds(self, tmp_path):
        out = tmp_path / "empty"
        assert run("phantom", "-n", "0", "--out", str(out)) == 0
        assert list(out.glob("*.nii.gz")) == []

    def test_unwritable_out_dir(self, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert run("phantom", "-n", "1", "--out", str(blocker / "sub")) == 2


class TestPreprocessCommand:
    def test_ct_skips_mri_steps(self, tmp_path):
        data = phantom_dir(tmp_path)
        out = tmp_path / "pp"
        assert run("preprocess", "--in", str(data), "--modality", "ct",
                   "--out", str(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["steps"] == ["reorient_ras", "resample_isotropic:1.0",
                                     "normalize_minmax"]
        assert all(e["status"] == "ok" for e in manifest["scans"])

    def test_mri_chain_includes_smoothing_and_standardization(self, tmp_path):
        data = phantom_dir(tmp_path, n=1, extents="16,16,16")
        out = tmp_path / "pp"
        assert run("preprocess", "--in", str(data), "--modality", "mri",
                   "--out", str(out)) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert any(s.startswith("smooth_edge_preserving") for s in manifest["steps"])
        assert any(s.startswith("standardize_intensity") for s in manifest["steps"])
        rec = load_scan(out / "phantom-0000.nii.gz", out / "phantom-0000_mask.nii.gz")
        assert rec.image.values.min() == 0.0
        assert rec.image.values.max() == 1.0

    def test_idempotent_manifest_hash(self, tmp_path):
        data = phantom_dir(tmp_path, n=2, extents="16,16,16")
        out1, out2 = tmp_path / "pp1", tmp_path / "pp2"
        for out in (out1, out2):
            assert run("preprocess", "--in", str(data), "--modality", "ct",
                       "--out", str(out)) == 0
        h1 = json.loads((out1 / "manifest.json").read_text())["content_sha256"]
        h2 = json.loads((out2 / "manifest.json").read_text())["content_sha256"]
        assert h1 == h2

    def test_corrupt_scan_partial_failure(self, tmp_path):
        data = phantom_dir(tmp_path, n=3, extents="16,16,16")
        (data / "phantom-0001.nii.gz").write_bytes(b"garbage")
        out = tmp_path / "pp"
        assert run("preprocess", "--in", str(data), "--modality", "ct",
                   "--out", str(out)) == 2
        manifest = json.loads((out / "manifest.json").read_text())
        statuses = {e["image"]: e["status"] for e in manifest["scans"]}
        assert statuses["phantom-0000.nii.gz"] == "ok"
        assert statuses["phantom-0001.nii.gz"].startswith("failed")
        assert statuses["phantom-0002.nii.gz"] == "ok"


class TestTrainInferEval:
    def test_round_trip(self, tmp_path):
        data = phantom_dir(tmp_path, n=4)
        run_dir = tmp_path / "run"
        code = run("train", "--data", str(data), "--fold", "0", "--out", str(run_dir),
                   "--seed", "0",
                   "--set", "train.epochs=2", "--set", "train.batch_size=2",
                   "--set", "train.crop=32,32,16", "--set", "infer.window=32,32,32",
                   "--set", "model.preset=desk-standard")
        assert code == 0
        assert (run_dir / "best.pt").exists()
        assert (run_dir / "history.csv").exists()

        pred_dir = tmp_path / "pred"
        scan = data / "phantom-0000.nii.gz"
        code = run("infer", "--checkpoint", str(run_dir / "best.pt"), "--scan", str(scan),
                   "--out", str(pred_dir), "--montage", "--set", "infer.window=32,32,32")
        assert code == 0
        pred = pred_dir / "phantom-0000_pred.nii.gz"
        assert pred.exists()
        assert (pred_dir / "phantom-0000_montage.png").stat().st_size > 0

        code = run("eval", "--pred", str(pred), "--gt", str(data / "phantom-0000_mask.nii.gz"))
        assert code == 0

    def test_eval_gt_against_itself(self, tmp_path, capsys):
        data = phantom_dir(tmp_path, n=1, extents="16,16,16")
        gt = data / "phantom-0000_mask.nii.gz"
        assert run("eval", "--pred", str(gt), "--gt", str(gt)) == 0
        out = capsys.readouterr().out
        assert "DSC 1.0000" in out and "PPV 1.0000" in out and "SENS 1.0000" in out

    def test_eval_extent_mismatch(self, tmp_path):
        a = phantom_dir(tmp_path, n=1, extents="16,16,16")
        b_dir = tmp_path / "other"
        assert run("phantom", "-n", "1", "--out", str(b_dir),
                   "--set", "phantom.extents=16,16,24") == 0
        code = run("eval", "--pred", str(a / "phantom-0000_mask.nii.gz"),
                   "--gt", str(b_dir / "phantom-0000_mask.nii.gz"))
        assert code == 2


class TestUsageAndConfig:
    def test_help_exits_zero(self):
        assert run("--help") == 0

    def test_missing_required_flag(self):
        assert run("crossval") == 1

    def test_unknown_config_key(self, tmp_path):
        out = tmp_path / "o"
        assert run("phantom", "-n", "0", "--out", str(out),
                   "--set", "model.flux_capacitor=1") == 1

    def test_unknown_preset(self, tmp_path):
        data = phantom_dir(tmp_path, n=4, extents="16,16,16")
        assert run("crossval", "--data", str(data), "--out", str(tmp_path / "cv"),
                   "--set", "model.preset=gigantic") == 1

    def test_config_file_and_override_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("phantom.blobs = 5\nseed = 3\n# comment\n")
        out = tmp_path / "o"
        assert run("phantom", "-n", "1", "--config", str(cfg), "--out", str(out),
                   "--set", "phantom.extents=16,16,16") == 0
        echoed = (out / "resolved.cfg").read_text()
        assert "phantom.blobs = 5" in echoed
        assert "seed = 3" in echoed
        # CLI --seed beats the config file
        assert run("phantom", "-n", "1", "--config", str(cfg), "--seed", "9",
                   "--out", str(out), "--set", "phantom.extents=16,16,16") == 0
        assert "seed = 9" in (out / "resolved.cfg").read_text()

    def test_fold_out_of_range(self, tmp_path):
        data = phantom_dir(tmp_path, n=4, extents="16,16,16")
        assert run("train", "--data", str(data), "--fold", "7",
                   "--out", str(tmp_path / "run")) == 1

    def test_crossval_with_too_few_scans(self, tmp_path):
        data = phantom_dir(tmp_path, n=2, extents="16,16,16")
        assert run("crossval", "--data", str(data), "--out", str(tmp_path / "cv"),
                   "--set", "cv.folds=4") == 2
