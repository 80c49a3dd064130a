"""Parameter checkpoint container.

Layout (all integers little-endian)::

    5 bytes   magic b"NSAE\\x01" (last byte is the format version)
    4 bytes   uint32 manifest length M
    M bytes   UTF-8 JSON manifest: {"meta": {...}, "tensors": [{"layer", "name", "shape", "offset"}, ...]}
    ...       tensor data, float32 little-endian, offsets relative to the start of this block
"""
from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CorruptCheckpoint

MAGIC = b"NSAE\x01"
_LEN = struct.Struct("<I")


def save_tensors(path, tensors, meta=None):
    """``tensors`` is an ordered iterable of (layer, name, array)."""
    manifest = {"meta": meta or {}, "tensors": []}
    blobs = []
    offset = 0
    for layer, name, arr in tensors:
        data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        manifest["tensors"].append(
            {"layer": layer, "name": name, "shape": list(np.shape(arr)), "offset": offset}
        )
        blobs.append(data)
        offset += len(data)
    head = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_LEN.pack(len(head)))
        fh.write(head)
        for b in blobs:
            fh.write(b)


def load_tensors(path):
    """Returns (meta, {(layer, name): float32 array})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + _LEN.size:
        raise CorruptCheckpoint(f"{path}: file too short for a checkpoint header")
    if raw[:4] != MAGIC[:4]:
        raise CorruptCheckpoint(f"{path}: bad magic {raw[:4]!r}")
    if raw[4:5] != MAGIC[4:5]:
        raise CorruptCheckpoint(f"{path}: unsupported checkpoint version {raw[4]}")
    (mlen,) = _LEN.unpack_from(raw, len(MAGIC))
    start = len(MAGIC) + _LEN.size
    if start + mlen > len(raw):
        raise CorruptCheckpoint(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[start : start + mlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CorruptCheckpoint(f"{path}: unreadable manifest ({exc})") from None
    data = memoryview(raw)[start + mlen :]
    out = {}
    expected = 0
    for entry in manifest.get("tensors", []):
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape, dtype=np.int64)) * 4
        off = entry["offset"]
        if off + nbytes > len(data):
            raise CorruptCheckpoint(f"{path}: truncated data for {entry['layer']}.{entry['name']}")
        arr = np.frombuffer(data[off : off + nbytes], dtype="<f4").reshape(shape)
        out[(entry["layer"], entry["name"])] = arr.astype(np.float32)
        expected = max(expected, off + nbytes)
    if expected != len(data):
        raise CorruptCheckpoint(f"{path}: {len(data) - expected} trailing bytes after tensor data")
    return manifest.get("meta", {}), out
