"""Versioned binary checkpoint container for model parameters.

Layout (all integers little-endian):

    magic "RJCM" | format version u32 | config length u32 | config JSON UTF-8
    | tensor count u32 | per tensor: name length u32 | UTF-8 name
    | rows u64 | cols u64 | row-major little-endian f64 payload
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

_MAGIC = b"RJCM"
_VERSION = 1


class CheckpointError(ValueError):
    """Malformed checkpoint file."""


def write_checkpoint(path, config: dict, tensors: dict[str, np.ndarray]) -> None:
    cfg_blob = json.dumps(config, sort_keys=True).encode("utf-8")
    parts = [_MAGIC, struct.pack("<I", _VERSION),
             struct.pack("<I", len(cfg_blob)), cfg_blob,
             struct.pack("<I", len(tensors))]
    for name in sorted(tensors):
        arr = np.atleast_2d(np.asarray(tensors[name], dtype="<f8"))
        blob = name.encode("utf-8")
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
        parts.append(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
        parts.append(np.ascontiguousarray(arr).tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_checkpoint(path) -> tuple[dict, dict[str, np.ndarray]]:
    blob = Path(path).read_bytes()
    off = 0

    def take(n):
        nonlocal off
        if off + n > len(blob):
            raise CheckpointError(
                f"{path}: truncated at byte {off} (wanted {n} more)")
        chunk = blob[off:off + n]
        off += n
        return chunk

    if take(4) != _MAGIC:
        raise CheckpointError(f"{path}: bad magic at byte 0")
    version = struct.unpack("<I", take(4))[0]
    if version != _VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    cfg_len = struct.unpack("<I", take(4))[0]
    config = json.loads(take(cfg_len).decode("utf-8"))
    n_tensors = struct.unpack("<I", take(4))[0]
    tensors = {}
    for _ in range(n_tensors):
        name_len = struct.unpack("<I", take(4))[0]
        name = take(name_len).decode("utf-8")
        rows, cols = struct.unpack("<QQ", take(16))
        data = np.frombuffer(take(8 * rows * cols), dtype="<f8")
        tensors[name] = data.astype(np.float64).reshape(rows, cols)
    if off != len(blob):
        raise CheckpointError(f"{path}: {len(blob) - off} trailing bytes")
    return config, tensors
