"""Binary PPM (P6) and PGM (P5) reading and writing, maxval 255 only."""
from __future__ import annotations

import os
import re

import numpy as np


class NetpbmError(ValueError):
    pass


_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def _parse_header(buf: bytes, magic: bytes):
    pos = 0
    fields = []
    for _ in range(4):
        m = _TOKEN.match(buf, pos)
        if m is None:
            raise NetpbmError("truncated header")
        fields.append(m.group(1))
        pos = m.end()
    if fields[0] != magic:
        raise NetpbmError(f"expected magic {magic!r}, found {fields[0]!r}")
    try:
        width, height, maxval = (int(f) for f in fields[1:])
    except ValueError as exc:
        raise NetpbmError(f"malformed header fields {fields[1:]}") from exc
    if width < 1 or height < 1:
        raise NetpbmError(f"invalid size {width}x{height}")
    if maxval != 255:
        raise NetpbmError(f"only maxval 255 is supported, got {maxval}")
    if pos >= len(buf) or buf[pos:pos + 1] not in b" \t\r\n":
        raise NetpbmError("missing whitespace after header")
    return width, height, pos + 1


def decode(buf: bytes) -> np.ndarray:
    """Decode P5 to ``[H, W]`` or P6 to ``[H, W, 3]`` uint8."""
    if buf[:2] == b"P5":
        channels = 1
    elif buf[:2] == b"P6":
        channels = 3
    else:
        raise NetpbmError(f"not a binary PGM/PPM file (magic {buf[:2]!r})")
    width, height, start = _parse_header(buf, buf[:2])
    n = width * height * channels
    body = buf[start:start + n]
    if len(body) != n:
        raise NetpbmError(f"expected {n} pixel bytes, found {len(body)}")
    arr = np.frombuffer(body, dtype=np.uint8)
    return arr.reshape(height, width) if channels == 1 else arr.reshape(height, width, 3)


def encode(arr: np.ndarray) -> bytes:
    arr = np.asarray(arr)
    if arr.dtype != np.uint8:
        raise NetpbmError(f"pixel data must be uint8, got {arr.dtype}")
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise NetpbmError(f"cannot encode array of shape {arr.shape}")
    h, w = arr.shape[:2]
    return magic + f"\n{w} {h}\n255\n".encode() + np.ascontiguousarray(arr).tobytes()


def read(path) -> np.ndarray:
    with open(path, "rb") as fh:
        try:
            return decode(fh.read())
        except NetpbmError as exc:
            raise NetpbmError(f"{os.fspath(path)}: {exc}") from None


def write(path, arr: np.ndarray) -> None:
    data = encode(arr)
    with open(path, "wb") as fh:
        fh.write(data)


def read_ppm(path) -> np.ndarray:
    arr = read(path)
    if arr.ndim != 3:
        raise NetpbmError(f"{os.fspath(path)}: expected a PPM (P6) image")
    return arr


def read_pgm(path) -> np.ndarray:
    arr = read(path)
    if arr.ndim != 2:
        raise NetpbmError(f"{os.fspath(path)}: expected a PGM (P5) image")
    return arr


def image_to_float(arr: np.ndarray) -> np.ndarray:
    """``[H, W, 3]`` uint8 -> ``[3, H, W]`` float32 in [0, 1]."""
    return (arr.astype(np.float32) / 255.0).transpose(2, 0, 1).copy()


def float_to_image(img: np.ndarray) -> np.ndarray:
    """``[3, H, W]`` float in [0, 1] -> ``[H, W, 3]`` uint8 (rounded, clipped)."""
    return np.clip(np.rint(np.asarray(img, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0).copy()
