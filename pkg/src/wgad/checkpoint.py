"""WGAD checkpoint files.

Layout (all integers little-endian)::

    b"WGAD"  version:u8
    repeated: name_len:u16  name:utf-8  rank:u8  dims:u32*rank  data:f32*prod(dims)
    crc32:u32   # of every preceding byte

Tensors are written in float32 regardless of training precision.
"""
from __future__ import annotations

import os
import struct
import tempfile
import zlib

import numpy as np

MAGIC = b"WGAD"
VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


class ChecksumError(CheckpointError):
    """Trailing CRC32 does not match the file contents."""


def encode(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, bytes([VERSION])]
    for name, arr in tensors.items():
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise CheckpointError(f"tensor name too long: {name[:40]}...")
        arr = np.asarray(arr)
        if arr.ndim > 0xFF:
            raise CheckpointError(f"rank too large for {name}")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def decode(blob: bytes) -> dict[str, np.ndarray]:
    if len(blob) < len(MAGIC) + 1 + 4:
        raise CheckpointError("file too short")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise ChecksumError("CRC32 mismatch")
    if body[:4] != MAGIC:
        raise CheckpointError("bad magic bytes")
    if body[4] != VERSION:
        raise CheckpointError(f"unsupported format version {body[4]}")
    out = {}
    pos = 5
    try:
        while pos < len(body):
            (n,) = struct.unpack_from("<H", body, pos)
            pos += 2
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            rank = body[pos]
            pos += 1
            dims = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            count = int(np.prod(dims, dtype=np.int64))
            if pos + 4 * count > len(body):
                raise CheckpointError(f"truncated data for {name!r}")
            out[name] = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(dims).copy()
            pos += 4 * count
    except (struct.error, IndexError, UnicodeDecodeError) as exc:
        raise CheckpointError(f"truncated or corrupt record: {exc}") from exc
    return out


def save(path, tensors: dict[str, np.ndarray]) -> None:
    """Write atomically: temp file in the same directory, then rename."""
    blob = encode(tensors)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        return decode(fh.read())


def pack_stores(**stores) -> dict[str, np.ndarray]:
    """Flatten named ParamStores into ``"<store>/<param>"`` tensors."""
    out = {}
    for prefix, store in stores.items():
        for name, arr in store.items():
            out[f"{prefix}/{name}"] = arr
    return out


def unpack_store(tensors: dict[str, np.ndarray], prefix: str) -> dict[str, np.ndarray]:
    head = prefix + "/"
    return {k[len(head):]: v for k, v in tensors.items() if k.startswith(head)}
