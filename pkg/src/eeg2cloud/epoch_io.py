"""Binary epoch container ("E3DE") reader/writer.

Layout (little-endian, no padding):

    magic     4 bytes  b"E3DE"
    version   u32      currently 1
    trials    u32
    channels  u32
    time      u32
    rate      f32
    kind      u8       0 = static, 1 = dynamic
    payload   trials * channels * time float32, row-major
    json_len  u32
    json      UTF-8 JSON: {"channel_names": [...], "labels": [...]}

The full byte-exact description lives in docs/formats.md.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .signals import EpochSet, Event, RawRecording, TrialLabel

MAGIC = b"E3DE"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIfB")
_KIND_CODE = {"static": 0, "dynamic": 1}
_KIND_NAME = {v: k for k, v in _KIND_CODE.items()}


def save_epochs(x: EpochSet, path: str | Path) -> None:
    payload = np.ascontiguousarray(x.epochs, dtype="<f4").tobytes()
    meta = {
        "channel_names": list(x.channel_names),
        "labels": [lab.to_dict() for lab in x.labels],
    }
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = _HEADER.pack(
        MAGIC,
        VERSION,
        x.n_trials,
        x.n_channels,
        x.n_samples,
        float(x.rate),
        _KIND_CODE[x.kind],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)


def is_epoch_container(path: str | Path) -> bool:
    try:
        with open(path, "rb") as fh:
            return fh.read(4) == MAGIC
    except OSError:
        return False


def load_epochs(path: str | Path) -> EpochSet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an epoch container (bad magic)")
    magic, version, trials, channels, time, rate, kind_code = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise ValueError(f"{path}: unsupported container version {version}")
    if kind_code not in _KIND_NAME:
        raise ValueError(f"{path}: unknown kind code {kind_code}")
    n = trials * channels * time
    start = _HEADER.size
    stop = start + 4 * n
    if len(raw) < stop + 4:
        raise ValueError(f"{path}: truncated container")
    epochs = np.frombuffer(raw[start:stop], dtype="<f4").reshape(trials, channels, time)
    (json_len,) = struct.unpack_from("<I", raw, stop)
    blob = raw[stop + 4 : stop + 4 + json_len]
    if len(blob) != json_len:
        raise ValueError(f"{path}: truncated label block")
    meta = json.loads(blob.decode("utf-8"))
    return EpochSet(
        epochs=epochs.astype(np.float64),
        kind=_KIND_NAME[kind_code],
        rate=float(rate),
        labels=[TrialLabel.from_dict(d) for d in meta["labels"]],
        channel_names=[str(n) for n in meta["channel_names"]],
    )


def save_raw_recording(rec: RawRecording, path: str | Path) -> None:
    """Persist a continuous recording as a .npz archive (documented in
    docs/formats.md)."""
    meta = {
        "subject_id": rec.subject_id,
        "channel_names": list(rec.channel_names),
        "events": [
            {"sample": ev.sample, "stimulus_id": ev.stimulus_id, "kind": ev.kind}
            for ev in rec.events
        ],
        "stimulus_labels": {k: list(v) for k, v in rec.stimulus_labels.items()},
    }
    np.savez(
        path,
        data=rec.data.astype(np.float64),
        sample_rate=np.float64(rec.sample_rate),
        meta=json.dumps(meta, sort_keys=True).encode("utf-8"),
    )


def load_raw_recording(path: str | Path) -> RawRecording:
    with np.load(path) as npz:
        data = npz["data"]
        rate = float(npz["sample_rate"])
        meta = json.loads(bytes(npz["meta"]).decode("utf-8"))
    return RawRecording(
        data=data,
        sample_rate=rate,
        events=[
            Event(sample=int(e["sample"]), stimulus_id=str(e["stimulus_id"]), kind=str(e["kind"]))
            for e in meta["events"]
        ],
        channel_names=[str(n) for n in meta["channel_names"]],
        subject_id=int(meta["subject_id"]),
        stimulus_labels={k: (int(v[0]), int(v[1])) for k, v in meta["stimulus_labels"].items()},
    )
