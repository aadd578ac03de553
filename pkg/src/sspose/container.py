"""Raw tensor container used for dataset label files and checkpoints.

File layout, little-endian throughout: magic "SSPT", version u8, then one or
more records of [dtype code u8, rank u8, dims as u32 each, payload]. Dtype
codes: 0 = float32, 1 = float64. Label files store float32; checkpoints store
float64 so that resumed training stays bit-identical.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"SSPT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class ContainerError(IOError):
    pass


def write_tensors(path, arrays) -> None:
    """Write a sequence of float arrays, preserving dtype (f32 or f64)."""
    out = bytearray()
    out += MAGIC
    out += struct.pack("<B", VERSION)
    for arr in arrays:
        a = np.asarray(arr, order="C")   # asarray keeps 0-d shapes intact
        if a.dtype not in _CODES:
            raise ContainerError(f"unsupported dtype {a.dtype}")
        if a.ndim > 4:
            raise ContainerError(f"rank {a.ndim} exceeds 4")
        out += struct.pack("<BB", _CODES[a.dtype], a.ndim)
        for d in a.shape:
            out += struct.pack("<I", d)
        out += a.astype(a.dtype.newbyteorder("<")).tobytes()
    Path(path).write_bytes(bytes(out))


def read_tensors(path):
    """Read back every tensor record in the file, in order."""
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise ContainerError(f"bad magic in {path}")
    version = buf[4]
    if version != VERSION:
        raise ContainerError(f"unsupported container version {version}")
    pos = 5
    arrays = []
    while pos < len(buf):
        code, rank = struct.unpack_from("<BB", buf, pos)
        pos += 2
        if code not in _DTYPES:
            raise ContainerError(f"unknown dtype code {code} in {path}")
        dims = struct.unpack_from(f"<{rank}I", buf, pos) if rank else ()
        pos += 4 * rank
        dt = _DTYPES[code]
        count = int(np.prod(dims)) if rank else 1
        nbytes = count * dt.itemsize
        if pos + nbytes > len(buf):
            raise ContainerError(f"truncated tensor payload in {path}")
        arr = np.frombuffer(buf, dtype=dt, count=count, offset=pos).reshape(dims)
        arrays.append(arr.astype(dt.newbyteorder("=")))
        pos += nbytes
    return arrays
