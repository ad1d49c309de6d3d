"""KFORGE1 array container.

Layout::

    b"KFORGE1"                      7-byte magic
    uint32 LE                       format version (1)
    uint64 LE                       manifest length in bytes
    manifest                        UTF-8 JSON list of {"name", "shape", "offset"}
    payload                         little-endian float64 values

``offset`` counts float64 elements from the start of the payload.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
from pathlib import Path
from typing import Mapping

import numpy as np

MAGIC = b"KFORGE1"
VERSION = 1
_HEADER = struct.Struct("<IQ")


class CheckpointError(ValueError):
    pass


def save_arrays(path, arrays: Mapping[str, np.ndarray]) -> None:
    """Write ``arrays`` atomically (temp file in the same directory, then rename)."""
    path = Path(path)
    manifest = []
    offset = 0
    for name, arr in arrays.items():
        a = np.asarray(arr, dtype=np.float64)
        manifest.append({"name": name, "shape": list(a.shape), "offset": offset})
        offset += a.size
    blob = json.dumps(manifest, separators=(",", ":")).encode("utf-8")

    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(MAGIC)
            fh.write(_HEADER.pack(VERSION, len(blob)))
            fh.write(blob)
            for arr in arrays.values():
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_arrays(path) -> dict[str, np.ndarray]:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{path}: bad magic, not a KFORGE1 file")
    pos = len(MAGIC)
    if len(raw) < pos + _HEADER.size:
        raise CheckpointError(f"{path}: truncated header")
    version, mlen = _HEADER.unpack_from(raw, pos)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos += _HEADER.size
    try:
        manifest = json.loads(raw[pos:pos + mlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable manifest ({exc})") from None
    pos += mlen
    payload = raw[pos:]
    if len(payload) % 8:
        raise CheckpointError(f"{path}: payload is not a whole number of float64 values")
    values = np.frombuffer(payload, dtype="<f8")

    out: dict[str, np.ndarray] = {}
    expected = 0
    for entry in manifest:
        shape = tuple(int(s) for s in entry["shape"])
        n = int(np.prod(shape, dtype=np.int64))
        if entry["offset"] != expected:
            raise CheckpointError(f"{path}: entry {entry['name']!r} has offset "
                                  f"{entry['offset']}, expected {expected}")
        if expected + n > values.size:
            raise CheckpointError(f"{path}: payload too short for {entry['name']!r}")
        out[entry["name"]] = values[expected:expected + n].astype(np.float64).reshape(shape)
        expected += n
    if expected != values.size:
        raise CheckpointError(f"{path}: manifest describes {expected} values, "
                              f"payload holds {values.size}")
    return out
