"""Flat binary tensor files: magic "NCT1", u8 rank, u32 extents, f32 data.

All integers and floats are little-endian; data is row-major float32.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import DimensionError, InputError

MAGIC = b"NCT1"


def write_tensor(path, array):
    array = np.asarray(array, dtype=np.float32)
    if array.ndim < 1 or array.ndim > 255:
        raise DimensionError(f"rank must be in [1,255], got {array.ndim}")
    if not np.all(np.isfinite(array)):
        raise InputError(f"refusing to serialize non-finite tensor to {path}")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<B", array.ndim))
        fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
        fh.write(array.astype("<f4").tobytes(order="C"))


def read_tensor(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MAGIC:
            raise InputError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (rank,) = struct.unpack("<B", fh.read(1))
        shape = struct.unpack(f"<{rank}I", fh.read(4 * rank))
        count = int(np.prod(shape)) if rank else 0
        raw = fh.read(4 * count)
        if len(raw) != 4 * count:
            raise InputError(f"{path}: truncated tensor data")
        data = np.frombuffer(raw, dtype="<f4").reshape(shape)
    if not np.all(np.isfinite(data)):
        raise InputError(f"{path}: tensor contains non-finite values")
    return data.astype(np.float32)
