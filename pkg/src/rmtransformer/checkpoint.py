"""RMTC binary checkpoint container.

Little-endian: magic ``RMTC``, u32 version, then per parameter until end of
file (lexicographic by name): u16 name length, UTF-8 name, u8 rank,
u32 extents, raw f32 values.
"""
from __future__ import annotations

import hashlib
import io
import struct
from pathlib import Path

import numpy as np

from .tensor import ParamSet, Tensor

MAGIC = b"RMTC"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: ParamSet) -> bytes:
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", VERSION))
    for name, t in params.items():
        raw = name.encode("utf-8")
        buf.write(struct.pack("<H", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<B", t.ndim))
        buf.write(struct.pack(f"<{t.ndim}I", *t.shape))
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    return buf.getvalue()


def decode_checkpoint(blob: bytes) -> ParamSet:
    if blob[:4] != MAGIC:
        raise CheckpointError("bad checkpoint magic")
    try:
        (version,) = struct.unpack_from("<I", blob, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        off = 8
        params = ParamSet()
        while off < len(blob):
            (n,) = struct.unpack_from("<H", blob, off)
            off += 2
            name = blob[off:off + n].decode("utf-8")
            off += n
            (rank,) = struct.unpack_from("<B", blob, off)
            off += 1
            shape = struct.unpack_from(f"<{rank}I", blob, off)
            off += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            if off + 4 * size > len(blob):
                raise CheckpointError("truncated checkpoint")
            arr = np.frombuffer(blob, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            params[name] = Tensor(arr.astype(np.float32))
    except struct.error as exc:
        raise CheckpointError("truncated checkpoint") from exc
    return params


def save_checkpoint(params: ParamSet, path) -> str:
    blob = encode_checkpoint(params)
    Path(path).write_bytes(blob)
    return hashlib.sha256(blob).hexdigest()


def load_checkpoint(path) -> ParamSet:
    return decode_checkpoint(Path(path).read_bytes())


def checkpoint_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
