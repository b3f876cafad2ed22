"""Epoch container format round-trip and byte-stability."""

import numpy as np
import pytest

from eeg2cloud.epoch_io import (
    is_epoch_container,
    load_epochs,
    load_raw_recording,
    save_epochs,
    save_raw_recording,
)
from eeg2cloud.signals import EpochSet, Event, RawRecording, TrialLabel


def sample_epochs():
    rng = np.random.default_rng(0)
    data = rng.normal(size=(3, 4, 250)).astype(np.float32).astype(np.float64)
    labels = [
        TrialLabel(stimulus_id=f"s{i}", object_class=i, color_class=i % 6,
                   subject_id=1, repetition=i % 2)
        for i in range(3)
    ]
    return EpochSet(epochs=data, kind="static", rate=250.0, labels=labels,
                    channel_names=["a", "b", "c", "d"])


def test_round_trip_preserves_everything(tmp_path):
    eps = sample_epochs()
    path = tmp_path / "x.epochs"
    save_epochs(eps, path)
    back = load_epochs(path)
    assert np.array_equal(back.epochs, eps.epochs)  # float32-exact payload
    assert back.kind == eps.kind and back.rate == eps.rate
    assert back.labels == eps.labels
    assert back.channel_names == eps.channel_names


def test_save_load_save_is_byte_identical(tmp_path):
    eps = sample_epochs()
    p1, p2 = tmp_path / "a.epochs", tmp_path / "b.epochs"
    save_epochs(eps, p1)
    save_epochs(load_epochs(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_magic_detection(tmp_path):
    eps = sample_epochs()
    path = tmp_path / "x.epochs"
    save_epochs(eps, path)
    assert is_epoch_container(path)
    other = tmp_path / "junk.bin"
    other.write_bytes(b"not a container")
    assert not is_epoch_container(other)
    with pytest.raises(ValueError, match="magic"):
        load_epochs(other)


def test_truncated_container_rejected(tmp_path):
    eps = sample_epochs()
    path = tmp_path / "x.epochs"
    save_epochs(eps, path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) // 2])
    with pytest.raises(ValueError, match="truncated"):
        load_epochs(path)


def test_raw_recording_round_trip(tmp_path):
    rec = RawRecording(
        data=np.random.default_rng(1).normal(size=(4, 5000)),
        sample_rate=1000.0,
        events=[Event(100, "s0", "static"), Event(2000, "s0", "dynamic")],
        channel_names=["a", "b", "c", "d"],
        subject_id=3,
        stimulus_labels={"s0": (5, 2)},
    )
    path = tmp_path / "rec.npz"
    save_raw_recording(rec, path)
    back = load_raw_recording(path)
    assert np.array_equal(back.data, rec.data)
    assert back.events == rec.events
    assert back.subject_id == 3
    assert back.stimulus_labels == {"s0": (5, 2)}
