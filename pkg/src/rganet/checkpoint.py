"""Binary checkpoint format (little-endian).

    magic "RGAN" | u32 version=1 | u32 json_len | JSON model config (UTF-8)
    u32 count | count x tensor                      (parameters)
    [tensor ... until end of file]                   (optional optimizer state)

    tensor = u16 name_len | name (UTF-8) | u8 rank | rank x u32 dims | fp32 row-major data

Optimizer moments are named ``<param>.m`` / ``<param>.v`` and the step counter
is the rank-0 tensor ``step``. Optimizer hyperparameters are not stored; they
come from the training configuration on resume.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .network import ModelConfig
from .optim import OptimizerState
from .params import ParamStore
from .tensor import Tensor

MAGIC = b"RGAN"
VERSION = 1


class CheckpointFormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    arr = np.asarray(arr, dtype="<f4", order="C")
    head = struct.pack("<H", len(raw)) + raw + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def save_checkpoint(path, config: ModelConfig, params: ParamStore,
                    optimizer: Optional[OptimizerState] = None) -> None:
    blob = json.dumps(config.to_dict(), sort_keys=True).encode("utf-8")
    parts = [MAGIC, struct.pack("<II", VERSION, len(blob)), blob,
             struct.pack("<I", len(params))]
    parts += [_pack_tensor(name, t.data) for name, t in params.items()]
    if optimizer is not None:
        if optimizer.step >= 2 ** 24:
            raise ValueError("step counter no longer exact in fp32")
        names = params.names()
        parts += [_pack_tensor(f"{n}.m", optimizer.m[n]) for n in names]
        parts += [_pack_tensor(f"{n}.v", optimizer.v[n]) for n in names]
        parts.append(_pack_tensor("step", np.asarray(optimizer.step, dtype=np.float32)))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(parts))
    tmp.replace(path)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointFormatError(f"truncated while reading {what}", self.pos)
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def tensor(self) -> Tuple[str, np.ndarray]:
        (nlen,) = self.unpack("<H", "tensor name length")
        start = self.pos
        try:
            name = self.take(nlen, "tensor name").decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointFormatError("tensor name is not UTF-8", start) from None
        (rank,) = self.unpack("<B", f"rank of {name}")
        dims = self.unpack(f"<{rank}I", f"dims of {name}") if rank else ()
        count = int(np.prod(dims)) if rank else 1
        data = np.frombuffer(self.take(4 * count, f"data of {name}"), dtype="<f4")
        return name, data.reshape(dims).astype(np.float32)


def load_checkpoint(path):
    """Returns (config, params, optimizer_state_or_None, config_dict)."""
    r = _Reader(Path(path).read_bytes())
    if r.take(4, "magic") != MAGIC:
        raise CheckpointFormatError("bad magic, not an RGAN checkpoint", 0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported version {version}", 4)
    (jlen,) = r.unpack("<I", "config length")
    jstart = r.pos
    try:
        meta = json.loads(r.take(jlen, "config").decode("utf-8"))
        config = ModelConfig.from_dict(meta)
    except (UnicodeDecodeError, json.JSONDecodeError, TypeError, ValueError) as exc:
        raise CheckpointFormatError(f"invalid config block: {exc}", jstart) from None
    (count,) = r.unpack("<I", "tensor count")
    params = ParamStore()
    for _ in range(count):
        start = r.pos
        name, arr = r.tensor()
        if name in params:
            raise CheckpointFormatError(f"duplicate tensor {name!r}", start)
        params.add(name, Tensor(arr))
    optimizer = None
    if r.pos < len(r.buf):
        optimizer = OptimizerState()
        seen_step = False
        while r.pos < len(r.buf):
            start = r.pos
            name, arr = r.tensor()
            base = name[:-2]
            if name == "step" and arr.ndim == 0:
                optimizer.step = int(arr.item())
                seen_step = True
            elif name.endswith(".m") and base in params and arr.shape == params[base].shape:
                optimizer.m[base] = arr
            elif name.endswith(".v") and base in params and arr.shape == params[base].shape:
                optimizer.v[base] = arr
            else:
                raise CheckpointFormatError(f"unexpected optimizer tensor {name!r}", start)
        missing = [n for n in params.names() if n not in optimizer.m or n not in optimizer.v]
        if missing or not seen_step:
            raise CheckpointFormatError(
                f"incomplete optimizer state ({missing[0] if missing else 'step'})", r.pos)
    return config, params, optimizer, meta
