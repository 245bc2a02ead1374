"""Flat named-tensor container for head parameters.

Layout (all little-endian)::

    b"RSPT"  u32 version  u32 count
    count x { u32 name_len, name (utf-8), u32 ndim, ndim x u32 dims,
              prod(dims) x f32 values (row-major) }
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FixtureError

MAGIC = b"RSPT"
VERSION = 1


def save_params(path, params):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(params)))
        for name in sorted(params):
            arr = np.ascontiguousarray(params[name], dtype="<f4")
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_params(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise FixtureError(f"{path}: not a parameter container")
    try:
        version, count = struct.unpack_from("<II", buf, 4)
        if version != VERSION:
            raise FixtureError(f"{path}: unsupported container version {version}")
        off = 12
        params = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<I", buf, off)
            off += 4
            name = buf[off : off + n].decode("utf-8")
            off += n
            (ndim,) = struct.unpack_from("<I", buf, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", buf, off)
            off += 4 * ndim
            size = int(np.prod(shape, dtype=np.int64))
            if off + 4 * size > len(buf):
                raise FixtureError(f"{path}: tensor {name} truncated")
            params[name] = np.frombuffer(buf, dtype="<f4", count=size, offset=off).reshape(shape).astype(np.float32)
            off += 4 * size
    except struct.error as e:
        raise FixtureError(f"{path}: truncated container ({e})") from None
    if off != len(buf):
        raise FixtureError(f"{path}: {len(buf) - off} trailing bytes")
    return params


def require(params, name, shape=None):
    try:
        arr = params[name]
    except KeyError:
        raise FixtureError(f"parameter {name!r} missing from fixture") from None
    if shape is not None and tuple(arr.shape) != tuple(shape):
        raise FixtureError(f"parameter {name!r} has shape {tuple(arr.shape)}, expected {tuple(shape)}")
    return np.asarray(arr, dtype=np.float64)
