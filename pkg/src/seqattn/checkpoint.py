"""Versioned binary checkpoints.

Layout (little endian)::

    b"SQATCKPT"            magic
    u32                    format version
    u32 + bytes            JSON header (config, epoch, optimizer step, RNG state)
    u32                    number of tensor entries
    entries:  u32 + name bytes, u32 ndim, ndim × u64 extents, float64 payload

Tensors are written in sorted name order so save -> load -> save is byte-identical.
"""
from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SQATCKPT"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass
class Checkpoint:
    config: dict
    params: dict  # name -> ndarray
    moments: dict = field(default_factory=dict)  # "m/<name>", "v/<name>" -> ndarray
    epoch: int = 0
    step: int = 0
    rng_state: dict | None = None
    version: int = VERSION

    def header(self):
        return {"config": self.config, "epoch": self.epoch, "step": self.step, "rng_state": self.rng_state}


def _dumps(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def to_bytes(ckpt):
    parts = [MAGIC, struct.pack("<I", ckpt.version)]
    head = _dumps(ckpt.header())
    parts += [struct.pack("<I", len(head)), head]
    entries = {f"param/{k}": v for k, v in ckpt.params.items()}
    entries.update({f"adam/{k}": v for k, v in ckpt.moments.items()})
    parts.append(struct.pack("<I", len(entries)))
    for name in sorted(entries):
        arr = np.asarray(entries[name], dtype="<f8")  # tobytes() is C order; keeps 0-d shapes
        nb = name.encode("utf-8")
        parts += [struct.pack("<I", len(nb)), nb, struct.pack("<I", arr.ndim)]
        parts += [struct.pack("<Q", d) for d in arr.shape]
        parts.append(arr.tobytes())
    return b"".join(parts)


def from_bytes(buf):
    if buf[:8] != MAGIC:
        raise CheckpointFormatError("not a checkpoint file (bad magic bytes)")
    try:
        (version,) = struct.unpack_from("<I", buf, 8)
        if version != VERSION:
            raise CheckpointFormatError(f"unsupported checkpoint version {version} (reader supports {VERSION})")
        off = 12
        (hlen,) = struct.unpack_from("<I", buf, off)
        off += 4
        head = json.loads(buf[off:off + hlen].decode("utf-8"))
        off += hlen
        (n,) = struct.unpack_from("<I", buf, off)
        off += 4
        params, moments = {}, {}
        for _ in range(n):
            (nl,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off:off + nl].decode("utf-8")
            off += nl
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from("<" + "Q" * ndim, buf, off)
            off += 8 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(buf, dtype="<f8", count=count, offset=off).reshape(shape).astype(np.float64)
            off += 8 * count
            kind, _, key = name.partition("/")
            (params if kind == "param" else moments)[key] = arr
        if off != len(buf):
            raise CheckpointFormatError(f"{len(buf) - off} trailing bytes after the last entry")
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointFormatError):
            raise
        raise CheckpointFormatError(f"corrupt checkpoint (version {VERSION} reader): {exc}") from exc
    return Checkpoint(head["config"], params, moments, head["epoch"], head["step"], head["rng_state"], version)


def save(path, ckpt):
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(to_bytes(ckpt))
    os.replace(tmp, path)


def load(path):
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise CheckpointFormatError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf)
