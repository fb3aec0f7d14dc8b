"""Binary checkpoint format for :class:`GnnParams`.

Layout (little endian): magic ``SFIMGNN1``; u32 length + UTF-8 JSON header
holding version, variant, hyperparameters and the tensor count; then per
tensor: u16 name length, name, u8 ndim, ndim x u32 dims, float64 data.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .core import GnnParams

MAGIC = b"SFIMGNN1"


class CheckpointError(ValueError):
    pass


def save_params(params: GnnParams, path, extra: dict | None = None) -> None:
    header = {"version": params.version, "variant": params.variant, "hyper": params.hyper,
              "tensors": len(params.tensors), "extra": extra or {}}
    hb = json.dumps(header, sort_keys=True).encode()
    parts = [MAGIC, struct.pack("<I", len(hb)), hb]
    for name in sorted(params.tensors):
        arr = np.ascontiguousarray(params.tensors[name], dtype="<f8")
        nb = name.encode()
        parts.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    path = os.fspath(path)
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    # write-then-rename so an interrupted save never leaves a torn file
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    with os.fdopen(fd, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


def load_params(path, variant: str | None = None) -> GnnParams:
    """Read a checkpoint; refuse it when ``variant`` is given and differs."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a GNN checkpoint")
    (hlen,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + hlen])
    if variant is not None and header["variant"] != variant:
        raise CheckpointError(f"{path}: checkpoint variant {header['variant']!r} "
                              f"does not match requested {variant!r}")
    off = 12 + hlen
    tensors = {}
    for _ in range(header["tensors"]):
        (nlen,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nlen].decode()
        off += nlen
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}I", data, off)
        off += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        if off + 8 * count > len(data):
            raise CheckpointError(f"{path}: truncated tensor {name}")
        tensors[name] = np.frombuffer(data, dtype="<f8", count=count, offset=off) \
            .reshape(shape).astype(float)
        off += 8 * count
    if off != len(data):
        raise CheckpointError(f"{path}: trailing bytes after last tensor")
    try:
        return GnnParams(header["hyper"], tensors, header["variant"], header["version"])
    except ValueError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc


def read_header(path) -> dict:
    with open(path, "rb") as fh:
        data = fh.read(12)
        if data[:8] != MAGIC:
            raise CheckpointError(f"{path}: not a GNN checkpoint")
        (hlen,) = struct.unpack("<I", data[8:12])
        return json.loads(fh.read(hlen))
