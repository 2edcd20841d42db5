"""Versioned binary container for checkpoints and indexes.

Layout: magic "RLCK", 4-byte kind tag, u32 version, u32 JSON-meta length,
meta bytes, then each array as (u16 name length, name, 16-byte dtype tag,
u32 ndim, u64 dims..., raw little-endian C-order data). Serialization is
byte-deterministic for identical inputs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError

MAGIC = b"RLCK"
VERSION = 1


def save_arrays(path, kind: str, arrays: dict[str, np.ndarray], meta: dict) -> None:
    if len(kind) != 4:
        raise ValueError("kind tag must be 4 characters")
    meta_bytes = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
    chunks = [MAGIC, kind.encode("ascii"), struct.pack("<II", VERSION, len(meta_bytes)), meta_bytes]
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        dtype = arr.dtype.newbyteorder("<")
        name_bytes = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(name_bytes)))
        chunks.append(name_bytes)
        chunks.append(dtype.str.encode("ascii").ljust(16, b"\0"))
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.astype(dtype).tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_arrays(path, kind: str) -> tuple[dict[str, np.ndarray], dict]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise ConfigError(f"{path}: not a ranklab checkpoint file")
    if data[4:8] != kind.encode("ascii"):
        raise ConfigError(f"{path}: expected kind {kind!r}, found {data[4:8].decode('ascii', 'replace')!r}")
    version, meta_len = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise ConfigError(f"{path}: unsupported checkpoint version {version}")
    offset = 16
    meta = json.loads(data[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    arrays: dict[str, np.ndarray] = {}
    while offset < len(data):
        (name_len,) = struct.unpack_from("<H", data, offset)
        offset += 2
        name = data[offset : offset + name_len].decode("utf-8")
        offset += name_len
        dtype = np.dtype(data[offset : offset + 16].rstrip(b"\0").decode("ascii"))
        offset += 16
        (ndim,) = struct.unpack_from("<I", data, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}Q", data, offset)
        offset += 8 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(
            data, dtype=dtype, count=count, offset=offset
        ).reshape(shape).copy()
        offset += count * dtype.itemsize
    return arrays, meta
