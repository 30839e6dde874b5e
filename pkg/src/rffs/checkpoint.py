"""Binary checkpoint container.

Layout::

    b"RFFSCKPT"            8-byte magic
    u32 version            little-endian
    u32 header_length      little-endian
    header                 UTF-8 JSON: {"arrays": [{name, shape, offset, nbytes}], "meta": {...}}
    payload                concatenated little-endian float32 arrays

Offsets are relative to the start of the payload.
"""
from __future__ import annotations

import json
import os
import struct
from typing import Mapping

import numpy as np

MAGIC = b"RFFSCKPT"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, arrays: Mapping[str, np.ndarray], meta: Mapping | None = None) -> None:
    entries = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        blob = np.ascontiguousarray(arr, dtype="<f4").tobytes()
        entries.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "nbytes": len(blob)})
        chunks.append(blob)
        offset += len(blob)
    header = json.dumps({"arrays": entries, "meta": dict(meta or {})}, sort_keys=True,
                        separators=(",", ":")).encode("utf-8")
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(header)))
        fh.write(header)
        for blob in chunks:
            fh.write(blob)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; nothing is returned unless the whole file validates."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16 or raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not an RFFS checkpoint (bad magic)")
    version, hlen = struct.unpack("<II", raw[8:16])
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    if 16 + hlen > len(raw):
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(raw[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header") from exc
    payload = memoryview(raw)[16 + hlen:]
    expected = sum(e["nbytes"] for e in header["arrays"])
    if len(payload) != expected:
        raise CheckpointError(f"{path}: payload size {len(payload)} != declared {expected}")
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        if count * 4 != e["nbytes"]:
            raise CheckpointError(f"{path}: array {e['name']} size does not match its shape")
        buf = payload[e["offset"]:e["offset"] + e["nbytes"]]
        arrays[e["name"]] = np.frombuffer(buf, dtype="<f4").astype(np.float32).reshape(e["shape"])
    return arrays, header["meta"]
