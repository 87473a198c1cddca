"""Binary checkpoint format.

Layout (all integers little-endian)::

    b"DIKD" | version u32 | count u32 |
    count x { name_len u16 | name utf-8 | rank u8 | rank x extent u32 | float32 data }
"""
from __future__ import annotations

import struct
from collections import OrderedDict

import numpy as np

MAGIC = b"DIKD"
VERSION = 1


class CheckpointError(ValueError):
    pass


def encode(tensors: dict) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        if arr.ndim > 0xFF:
            raise CheckpointError(f"tensor {name!r} has too many dimensions")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(parts)


def decode(buf: bytes) -> "OrderedDict[str, np.ndarray]":
    if buf[:4] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise CheckpointError(f"unsupported checkpoint version {version}")
        pos = 12
        out: OrderedDict[str, np.ndarray] = OrderedDict()
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode("utf-8")
            pos += nlen
            (rank,) = struct.unpack_from("<B", buf, pos)
            pos += 1
            shape = struct.unpack_from(f"<{rank}I", buf, pos)
            pos += 4 * rank
            size = int(np.prod(shape, dtype=np.int64))
            if pos + 4 * size > len(buf):
                raise CheckpointError(f"truncated data for tensor {name!r}")
            out[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=pos).reshape(shape).astype(np.float32)
            pos += 4 * size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint: {exc}") from None
    if pos != len(buf):
        raise CheckpointError(f"{len(buf) - pos} trailing bytes after last tensor")
    return out


def save(path, tensors: dict) -> None:
    data = encode(tensors)
    with open(path, "wb") as fh:
        fh.write(data)


def load(path) -> "OrderedDict[str, np.ndarray]":
    with open(path, "rb") as fh:
        return decode(fh.read())
