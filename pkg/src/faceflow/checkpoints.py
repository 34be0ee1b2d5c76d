"""Versioned binary checkpoint container.

Layout (little-endian):
    magic "FFCP" | u32 format version | u64 json length | json metadata
    | u32 entry count | entries | u32 CRC32 of all preceding bytes

Each entry: u16 name length | name utf-8 | u8 dtype code (0=f4, 1=f8)
| 4 x u32 shape | raw payload. The CRC covers everything, so a corrupted or
truncated file never yields partial state.
"""

from __future__ import annotations

import json
import struct
import zlib
from pathlib import Path

import numpy as np

from .errors import CheckpointError

MAGIC = b"FFCP"
FORMAT_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODE_BY_KIND = {"float32": 0, "float64": 1}


def write_checkpoint(path, meta: dict, arrays: dict) -> None:
    chunks = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    chunks.append(struct.pack("<Q", len(blob)))
    chunks.append(blob)
    chunks.append(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        if arr.dtype.name not in _CODE_BY_KIND:
            raise CheckpointError(f"cannot serialize dtype {arr.dtype} for entry '{name}'")
        if arr.ndim != 4:
            raise CheckpointError(f"entry '{name}' must be rank-4, got shape {arr.shape}")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<H", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<B", _CODE_BY_KIND[arr.dtype.name]))
        chunks.append(struct.pack("<4I", *arr.shape))
        chunks.append(arr.astype(arr.dtype.newbyteorder("<")).tobytes())
    body = b"".join(chunks)
    payload = body + struct.pack("<I", zlib.crc32(body))
    Path(path).write_bytes(payload)


def read_checkpoint(path):
    p = Path(path)
    if not p.exists():
        raise CheckpointError(f"checkpoint not found: {p}")
    raw = p.read_bytes()
    if len(raw) < 21:
        raise CheckpointError(f"{p}: truncated checkpoint ({len(raw)} bytes)")
    if raw[:4] != MAGIC:
        raise CheckpointError(f"{p}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{p}: unsupported checkpoint version {version} (expected {FORMAT_VERSION})")
    body, stored_crc = raw[:-4], struct.unpack("<I", raw[-4:])[0]
    if zlib.crc32(body) != stored_crc:
        raise CheckpointError(f"{p}: checksum mismatch, file is corrupted")
    try:
        offset = 8
        (json_len,) = struct.unpack_from("<Q", raw, offset)
        offset += 8
        meta = json.loads(raw[offset : offset + json_len].decode("utf-8"))
        offset += json_len
        (count,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", raw, offset)
            offset += 2
            name = raw[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (code,) = struct.unpack_from("<B", raw, offset)
            offset += 1
            if code not in _DTYPE_CODES:
                raise CheckpointError(f"{p}: unknown dtype code {code} for entry '{name}'")
            shape = struct.unpack_from("<4I", raw, offset)
            offset += 16
            dtype = _DTYPE_CODES[code]
            nbytes = int(np.prod(shape)) * dtype.itemsize
            arrays[name] = np.frombuffer(raw, dtype=dtype, count=int(np.prod(shape)), offset=offset).reshape(shape).copy()
            offset += nbytes
        if offset != len(body):
            raise CheckpointError(f"{p}: trailing bytes after parameter table")
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise CheckpointError(f"{p}: malformed checkpoint: {exc}") from exc
    return meta, arrays
