"""NSK1 tensor container, used for checkpoints and dataset payloads.

Layout (all integers little-endian uint32, payloads little-endian float64)::

    b"NSK1"  n_records
    repeated n_records times:
        name_len  name (utf-8)  rank  dim_0 ... dim_{rank-1}  payload

Integer-valued tensors (labels, seeds) are stored as float64, which is exact
below 2**53.
"""
from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .model import Arch, ModelParams, ShapeError

MAGIC = b"NSK1"
_U32 = struct.Struct("<I")
_ARCH_KEY = "__arch__"
_ARCH_FIELDS = ("image_size", "conv1", "conv2", "fc1", "fc2", "source_len")


class FormatError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} at byte offset {offset}")
        self.offset = offset


def encode(tensors: Mapping[str, np.ndarray]) -> bytes:
    parts = [MAGIC, _U32.pack(len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        parts.append(_U32.pack(len(raw)))
        parts.append(raw)
        parts.append(_U32.pack(arr.ndim))
        parts.extend(_U32.pack(d) for d in arr.shape)
        parts.append(np.ascontiguousarray(arr).tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> dict[str, np.ndarray]:
    pos = 0

    def take(n: int, what: str) -> bytes:
        nonlocal pos
        if pos + n > len(buf):
            raise FormatError(f"truncated file while reading {what}", pos)
        out = buf[pos:pos + n]
        pos += n
        return out

    if take(4, "magic") != MAGIC:
        raise FormatError("bad magic (expected b'NSK1')", 0)
    n_records = _U32.unpack(take(4, "record count"))[0]
    out = {}
    for _ in range(n_records):
        start = pos
        name_len = _U32.unpack(take(4, "name length"))[0]
        try:
            name = take(name_len, "name").decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("tensor name is not utf-8", start + 4) from None
        rank = _U32.unpack(take(4, "rank"))[0]
        if rank > 16:
            raise FormatError(f"implausible rank {rank}", pos - 4)
        dims = tuple(_U32.unpack(take(4, "dims"))[0] for _ in range(rank))
        count = int(np.prod(dims, dtype=np.int64)) if dims else 1
        payload = take(8 * count, f"payload of {name!r}")
        out[name] = np.frombuffer(payload, dtype="<f8").reshape(dims).astype(np.float64)
    if pos != len(buf):
        raise FormatError(f"{len(buf) - pos} trailing bytes", pos)
    return out


def write_nsk(path, tensors: Mapping[str, np.ndarray]) -> None:
    Path(path).write_bytes(encode(tensors))


def read_nsk(path) -> dict[str, np.ndarray]:
    return decode(Path(path).read_bytes())


def save_params(params: ModelParams, path) -> None:
    arch = np.array([getattr(params.arch, f) for f in _ARCH_FIELDS], dtype=np.float64)
    write_nsk(path, {_ARCH_KEY: arch, **params.tensors})


def load_params(path) -> ModelParams:
    tensors = read_nsk(path)
    if _ARCH_KEY not in tensors:
        raise FormatError("checkpoint has no architecture record", 8)
    try:
        arch = Arch(**{f: int(v) for f, v in zip(_ARCH_FIELDS, tensors.pop(_ARCH_KEY))})
        return ModelParams(arch, tensors)
    except (ShapeError, TypeError) as exc:
        raise FormatError(f"checkpoint does not describe a valid model: {exc}", 0) from exc
