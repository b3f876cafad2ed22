"""Run-config validation and checkpoint container tests."""

import json

import numpy as np
import pytest
import torch

from eeg2cloud.checkpoint import Checkpoint, pack_rng_state, restore_rng_state
from eeg2cloud.config import (
    DATA_DIR_ENV,
    RunConfig,
    config_from_dict,
    config_to_dict,
    load_config,
    save_config,
)


class TestRunConfig:
    def test_defaults_match_published_hyperparameters(self):
        cfg = RunConfig()
        assert cfg.loss.alpha == 0.01 and cfg.loss.gamma == 0.1
        assert cfg.train.lr == 1e-3 and cfg.train.adam_betas == (0.95, 0.999)
        assert cfg.encoder.feature_dim == 1024
        assert cfg.preprocess.target_rate == 250.0
        assert cfg.synth.points_per_cloud == 8192

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValueError, match="unknown keys.*bogus"):
            config_from_dict({"bogus": 1})
        with pytest.raises(ValueError, match="config.train.*unknown"):
            config_from_dict({"train": {"learning_rate_typo": 0.1}})

    def test_round_trip(self, tmp_path):
        cfg = RunConfig()
        save_config(cfg, tmp_path / "cfg.json")
        back = load_config(tmp_path / "cfg.json")
        assert config_to_dict(back) == config_to_dict(cfg)

    def test_partial_override(self, tmp_path):
        doc = {"train": {"lr": 0.5}, "synth": {"n_classes": 3}}
        (tmp_path / "cfg.json").write_text(json.dumps(doc))
        cfg = load_config(tmp_path / "cfg.json")
        assert cfg.train.lr == 0.5
        assert cfg.synth.n_classes == 3
        assert cfg.train.adam_betas == (0.95, 0.999)  # untouched defaults

    def test_invalid_values_rejected(self):
        with pytest.raises(ValueError):
            config_from_dict({"loss": {"alpha": 2.0}})
        with pytest.raises(ValueError):
            config_from_dict({"synth": {"n_classes": 1}})

    def test_data_dir_resolution(self, monkeypatch, tmp_path):
        cfg = RunConfig()
        with pytest.raises(ValueError, match=DATA_DIR_ENV):
            cfg.resolve_data_dir(None)
        monkeypatch.setenv(DATA_DIR_ENV, str(tmp_path))
        assert cfg.resolve_data_dir(None) == tmp_path
        assert cfg.resolve_data_dir("explicit") == __import__("pathlib").Path("explicit")


class TestCheckpoint:
    def sample(self):
        rng = np.random.default_rng(0)
        return Checkpoint(
            tensors={
                "model.weight": rng.normal(size=(4, 3)).astype(np.float32),
                "model.bias": rng.normal(size=(4,)).astype(np.float64),
                "_opt.0.step": np.asarray(7.0, dtype=np.float64),
                "_rng.torch": rng.integers(0, 255, size=16).astype(np.uint8),
                "count": np.asarray([3, 4], dtype=np.int64),
            },
            meta={"kind": "encoder", "step": 7, "arch": {"d_model": 8}},
        )

    def test_round_trip(self, tmp_path):
        ck = self.sample()
        ck.save(tmp_path / "m.ckpt")
        back = Checkpoint.load(tmp_path / "m.ckpt")
        assert back.meta == ck.meta
        assert set(back.tensors) == set(ck.tensors)
        for k in ck.tensors:
            assert np.array_equal(back.tensors[k], ck.tensors[k])
            assert back.tensors[k].dtype == np.asarray(ck.tensors[k]).dtype

    def test_save_load_save_byte_identical(self, tmp_path):
        ck = self.sample()
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        ck.save(p1)
        Checkpoint.load(p1).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_sidecar_written(self, tmp_path):
        ck = self.sample()
        ck.save(tmp_path / "m.ckpt")
        with open(tmp_path / "m.ckpt.json") as fh:
            side = json.load(fh)
        assert side["arch"] == {"d_model": 8}

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"garbage")
        with pytest.raises(ValueError, match="magic"):
            Checkpoint.load(tmp_path / "x.ckpt")


def test_torch_rng_state_round_trip():
    gen = torch.Generator().manual_seed(42)
    torch.randn(3, generator=gen)
    packed = pack_rng_state(gen)
    a = torch.randn(5, generator=gen)
    gen2 = torch.Generator()
    restore_rng_state(gen2, packed)
    b = torch.randn(5, generator=gen2)
    assert torch.equal(a, b)
