"""Named-tensor checkpoint container.

Binary layout (little-endian, no padding):

    magic       4 bytes  b"NTCK"
    version     u32      currently 1
    meta_len    u32
    meta        UTF-8 JSON (architecture, config snapshot, step, rng meta)
    count       u32      number of tensors
    per tensor:
      name_len  u16
      name      UTF-8
      dtype     u8       0=f32, 1=f64, 2=i64, 3=u8
      ndim      u8
      shape     u32 * ndim
      data      raw little-endian values

Tensors are written in sorted-name order, so save -> load -> save reproduces
identical bytes. A human-readable JSON sidecar (<path>.json) mirrors the
metadata.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

MAGIC = b"NTCK"
VERSION = 1
_DTYPES = {0: "<f4", 1: "<f8", 2: "<i8", 3: "u1"}
_DTYPE_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


@dataclass
class Checkpoint:
    tensors: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def step(self) -> int:
        return int(self.meta.get("step", 0))

    def save(self, path: str | Path) -> None:
        path = Path(path)
        blob = json.dumps(self.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob]
        names = sorted(self.tensors)
        parts.append(struct.pack("<I", len(names)))
        for name in names:
            arr = np.asarray(self.tensors[name])
            code = _DTYPE_CODES.get(arr.dtype.newbyteorder("<"))
            if code is None:
                code = _DTYPE_CODES.get(np.dtype(arr.dtype.name))
            if code is None:
                raise TypeError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes()
            nb = name.encode("utf-8")
            parts.append(struct.pack("<H", len(nb)))
            parts.append(nb)
            parts.append(struct.pack("<BB", code, arr.ndim))
            parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            parts.append(raw)
        path.write_bytes(b"".join(parts))
        sidecar = path.with_suffix(path.suffix + ".json")
        with open(sidecar, "w", encoding="utf-8") as fh:
            json.dump(self.meta, fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        raw = Path(path).read_bytes()
        if raw[:4] != MAGIC:
            raise ValueError(f"{path}: not a checkpoint container (bad magic)")
        version, meta_len = struct.unpack_from("<II", raw, 4)
        if version != VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        meta = json.loads(raw[off : off + meta_len].decode("utf-8"))
        off += meta_len
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        tensors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off : off + name_len].decode("utf-8")
            off += name_len
            code, ndim = struct.unpack_from("<BB", raw, off)
            off += 2
            shape = struct.unpack_from(f"<{ndim}I", raw, off)
            off += 4 * ndim
            dt = np.dtype(_DTYPES[code])
            n_bytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            tensors[name] = np.frombuffer(raw[off : off + n_bytes], dtype=dt).reshape(shape).copy()
            off += n_bytes
        return cls(tensors=tensors, meta=meta)


def state_dict_to_tensors(prefix: str, module: torch.nn.Module) -> dict[str, np.ndarray]:
    return {f"{prefix}.{k}": v.detach().cpu().numpy() for k, v in module.state_dict().items()}


def tensors_to_state_dict(prefix: str, tensors: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
    pre = prefix + "."
    return {
        k[len(pre):]: torch.as_tensor(v)
        for k, v in tensors.items()
        if k.startswith(pre)
    }


def pack_rng_state(generator: torch.Generator) -> np.ndarray:
    return generator.get_state().numpy()


def restore_rng_state(generator: torch.Generator, packed: np.ndarray) -> None:
    generator.set_state(torch.as_tensor(packed, dtype=torch.uint8))
