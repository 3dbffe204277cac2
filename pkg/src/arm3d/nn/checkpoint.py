"""Single-file checkpoint format for a ParamStore.

Layout (all integers little-endian):

    bytes 0..7    magic ``b"ARM3DCK1"``
    uint32        length H of the UTF-8 JSON header
    H bytes       header: {"version": 1, "step_count": int, "meta": {...},
                           "entries": [{"name", "shape", "trainable"}, ...]}
    payload       for each entry, in header order, the float64
                  little-endian row-major values

The header's ``meta`` carries model/dataset identifiers (feature width,
category table) so eval can reject incompatible checkpoints. Batchnorm
running statistics are ordinary non-trainable entries and round-trip
bit-exactly with everything else.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import CheckpointError
from .params import ParamStore

MAGIC = b"ARM3DCK1"
VERSION = 1


def save_checkpoint(params: ParamStore, path, meta=None):
    header = {
        "version": VERSION,
        "step_count": params.step_count,
        "meta": meta or {},
        "entries": [
            {"name": name, "shape": list(p.value.shape), "trainable": p.trainable}
            for name, p in params.entries.items()
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for p in params.entries.values():
            fh.write(np.ascontiguousarray(p.value, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns (ParamStore, meta dict)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (hlen,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    if header.get("version") != VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {header.get('version')!r}")

    params = ParamStore(step_count=int(header["step_count"]))
    offset = 12 + hlen
    for entry in header["entries"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CheckpointError(f"{path}: truncated payload at {entry['name']!r}")
        values = np.frombuffer(raw[offset:offset + nbytes], dtype="<f8")
        offset += nbytes
        params.add(entry["name"], values.reshape(shape).astype(np.float64),
                   trainable=entry["trainable"])
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")
    return params, header["meta"]
