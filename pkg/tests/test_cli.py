"""End-to-end CLI tests on a miniature workspace."""

import hashlib
import json
from pathlib import Path

import numpy as np
import pytest

from eeg2cloud.cli import main
from eeg2cloud.epoch_io import load_epochs, save_raw_recording
from eeg2cloud.synth import gen_raw_recording

MINI = {
    "encoder": {"d_model": 32, "n_heads": 2, "n_layers": 1, "patch": 25,
                "decouple_hidden": 64},
    "train": {"batch_size": 8, "encoder_epochs": 2, "decoder_steps": 5,
              "color_steps": 5, "log_every": 1, "seed": 1},
    "diffusion": {"n_steps": 40, "sample_steps": 8, "train_points": 64,
                  "widths": [16, 24, 24], "ctx_dim": 16},
    "color": {"hidden": 16},
    "eval": {"classifier_steps": 30, "chance_trials": 20000, "seed": 2},
    "synth": {"n_classes": 2, "instances_per_class": 2, "train_instances": 1,
              "points_per_cloud": 128, "seed": 9},
}


def tree_hash(root: Path) -> dict:
    return {
        str(p.relative_to(root)): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*"))
        if p.is_file()
    }


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg_path = root / "config.json"
    cfg_path.write_text(json.dumps(MINI))
    assert main(["synth", "--config", str(cfg_path), "--out", str(root / "data")]) == 0
    return root, cfg_path


class TestSynthCommand:
    def test_refuses_overwrite_without_force(self, workspace, capsys):
        root, cfg = workspace
        assert main(["synth", "--config", str(cfg), "--out", str(root / "data")]) == 1
        assert "force" in capsys.readouterr().err

    def test_force_and_determinism(self, workspace, tmp_path):
        root, cfg = workspace
        out2 = tmp_path / "data2"
        assert main(["synth", "--config", str(cfg), "--out", str(out2)]) == 0
        assert tree_hash(root / "data") == tree_hash(out2)
        assert main(["synth", "--config", str(cfg), "--out", str(out2), "--force"]) == 0


class TestPreprocessCommand:
    def test_raw_to_containers(self, workspace, tmp_path):
        root, cfg = workspace
        rec = gen_raw_recording([("s0", 0, 1), ("s1", 1, 2)], repetitions=1,
                                snr=4.0, seed=3)
        raw = tmp_path / "rec.npz"
        save_raw_recording(rec, raw)
        out = tmp_path / "pre"
        assert main(["preprocess", "--config", str(cfg), "--input", str(raw),
                     "--out", str(out)]) == 0
        static = load_epochs(out / "rec_static.epochs")
        assert static.rate == 250.0  # 4:1 downsample recorded in the header
        assert static.n_samples == 250
        assert (out / "preprocess_report.json").exists()

    def test_rejects_already_preprocessed_input(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        container = root / "data" / "train_static.epochs"
        assert main(["preprocess", "--config", str(cfg), "--input", str(container),
                     "--out", str(tmp_path / "x")]) == 1
        assert "already" in capsys.readouterr().err

    def test_rejected_events_logged(self, workspace, tmp_path):
        root, cfg = workspace
        rec = gen_raw_recording([("s0", 0, 1)], repetitions=2, snr=4.0, seed=4)
        # event too close to the end: dynamic window cannot fit
        from eeg2cloud.signals import Event

        rec.events.append(Event(rec.data.shape[1] - 100, "late", "dynamic"))
        raw = tmp_path / "rec.npz"
        save_raw_recording(rec, raw)
        out = tmp_path / "pre"
        assert main(["preprocess", "--config", str(cfg), "--input", str(raw),
                     "--out", str(out)]) == 0
        report = json.loads((out / "preprocess_report.json").read_text())
        assert any("late" in entry for entry in report["rec.npz"])


@pytest.fixture(scope="module")
def trained(workspace):
    root, cfg = workspace
    data = root / "data"
    assert main(["train-encoder", "--config", str(cfg), "--data", str(data),
                 "--out", str(root / "enc")]) == 0
    assert main(["train-decoder", "--config", str(cfg), "--data", str(data),
                 "--encoder", str(root / "enc" / "encoder.ckpt"),
                 "--out", str(root / "dec")]) == 0
    assert main(["train-color", "--config", str(cfg), "--data", str(data),
                 "--encoder", str(root / "enc" / "encoder.ckpt"),
                 "--out", str(root / "col")]) == 0
    return root, cfg


class TestTrainingCommands:
    def test_checkpoints_exist(self, trained):
        root, _ = trained
        assert (root / "enc" / "encoder.ckpt").exists()
        assert (root / "enc" / "encoder_loss.csv").exists()
        assert (root / "dec" / "decoder.ckpt").exists()
        assert (root / "col" / "color.ckpt").exists()

    def test_missing_encoder_checkpoint_actionable(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        code = main(["train-decoder", "--config", str(cfg), "--data", str(root / "data"),
                     "--encoder", str(tmp_path / "missing.ckpt"),
                     "--out", str(tmp_path / "o")])
        assert code == 1
        assert "train" in capsys.readouterr().err


class TestSampleCommand:
    def test_emits_five_colored_clouds_per_stimulus(self, trained, tmp_path):
        root, cfg = trained
        out = tmp_path / "samples"
        assert main(["sample", "--config", str(cfg), "--data", str(root / "data"),
                     "--encoder", str(root / "enc" / "encoder.ckpt"),
                     "--decoder", str(root / "dec" / "decoder.ckpt"),
                     "--color", str(root / "col" / "color.ckpt"),
                     "--stimuli", "c00_i01", "--n", "5", "--out", str(out)]) == 0
        files = sorted(out.glob("c00_i01_sample*.ply"))
        assert len(files) == 5
        assert all("seed" in f.name for f in files)
        from eeg2cloud.pointcloud import load_ply

        cloud = load_ply(files[0])  # colored output parses back
        assert cloud.colors is not None and len(cloud) == 64


class TestEvaluateCommand:
    def test_chance_selftest_matches_table_rows(self, workspace, tmp_path):
        root, cfg = workspace
        out = tmp_path / "chance"
        assert main(["evaluate", "--config", str(cfg), "--data", str(root / "data"),
                     "--chance-selftest", "--out", str(out)]) == 0
        doc = json.loads((out / "chance_selftest.json").read_text())
        assert doc["metrics"]["object_top1_chance"] == pytest.approx(1.39, abs=0.3)
        assert doc["metrics"]["color_top1_chance"] == pytest.approx(16.67, abs=1.0)

    def test_full_report(self, trained, tmp_path):
        root, cfg = trained
        out = tmp_path / "eval"
        assert main(["evaluate", "--config", str(cfg), "--data", str(root / "data"),
                     "--encoder", str(root / "enc" / "encoder.ckpt"),
                     "--decoder", str(root / "dec" / "decoder.ckpt"),
                     "--out", str(out)]) == 0
        report = json.loads((out / "report.json").read_text())
        metrics = report["metrics"]
        assert "fused/object_top1" in metrics
        assert "recon/avg_2way_top1" in metrics
        assert "recon/best_chamfer_x100" in metrics
        assert (out / "classification.csv").exists()
        assert (out / "reconstruction.csv").exists()
        # 2-class pool cannot host a 10-way protocol
        assert report["metadata"]["protocol_configs"] == [[2, 1]]

    def test_missing_encoder_is_actionable(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        code = main(["evaluate", "--config", str(cfg), "--data", str(root / "data"),
                     "--out", str(tmp_path / "e")])
        assert code == 1
        assert "encoder" in capsys.readouterr().err


class TestAblateCommand:
    def test_channel_mode_64_entries(self, trained, tmp_path):
        root, cfg = trained
        out = tmp_path / "abl"
        assert main(["ablate", "--config", str(cfg), "--data", str(root / "data"),
                     "--encoder", str(root / "enc" / "encoder.ckpt"),
                     "--mode", "channel", "--out", str(out)]) == 0
        records = json.loads((out / "channel_saliency.json").read_text())
        assert len(records) == 64

    def test_region_mode_grid(self, trained, tmp_path):
        root, cfg = trained
        out = tmp_path / "reg"
        assert main(["ablate", "--config", str(cfg), "--data", str(root / "data"),
                     "--encoder", str(root / "enc" / "encoder.ckpt"),
                     "--mode", "region", "--out", str(out)]) == 0
        grid = json.loads((out / "region_ablation.json").read_text())
        assert len(grid) == 5
        assert all(len(v) == 3 for v in grid.values())


def test_data_dir_env_fallback(workspace, tmp_path, monkeypatch):
    root, cfg = workspace
    monkeypatch.setenv("NEURO3D_DATA_DIR", str(root / "data"))
    out = tmp_path / "enc_env"
    assert main(["train-encoder", "--config", str(cfg), "--out", str(out)]) == 0
    assert (out / "encoder.ckpt").exists()
