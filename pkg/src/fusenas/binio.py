"""Flat binary container for named numpy arrays.

Layout, all integers little-endian:

    magic  b"FNAB1\\n"
    u32    array count
    per array:
        u16    name length in bytes
        ...    name, utf-8
        u8     dtype code (see DTYPE_CODES)
        u8     rank
        u64[]  dims
        ...    raw values, C order, little-endian

The format has no alignment or compression; files regenerate byte-identically
from the same inputs.
"""

from __future__ import annotations

import io
import struct
from typing import BinaryIO, Dict, Mapping

import numpy as np

MAGIC = b"FNAB1\n"

DTYPE_CODES = {
    0: np.dtype("<f4"),
    1: np.dtype("<f8"),
    2: np.dtype("<i4"),
    3: np.dtype("<i8"),
    4: np.dtype("<u1"),
}
def _code_for(dtype: np.dtype) -> int:
    for code, d in DTYPE_CODES.items():
        if np.dtype(dtype).kind == d.kind and np.dtype(dtype).itemsize == d.itemsize:
            return code
    raise ValueError(f"unsupported dtype {dtype!r}")


def write_block(fh: BinaryIO, arrays: Mapping[str, np.ndarray]) -> None:
    """Write the array block (no magic) in sorted-name order."""
    fh.write(struct.pack("<I", len(arrays)))
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name])
        code = _code_for(arr.dtype)
        raw = name.encode("utf-8")
        fh.write(struct.pack("<H", len(raw)))
        fh.write(raw)
        fh.write(struct.pack("<BB", code, arr.ndim))
        for dim in arr.shape:
            fh.write(struct.pack("<Q", dim))
        fh.write(arr.astype(DTYPE_CODES[code], copy=False).tobytes(order="C"))


def read_block(fh: BinaryIO) -> Dict[str, np.ndarray]:
    (count,) = struct.unpack("<I", fh.read(4))
    out: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", fh.read(2))
        name = fh.read(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", fh.read(2))
        if code not in DTYPE_CODES:
            raise ValueError(f"unknown dtype code {code}")
        dims = struct.unpack(f"<{ndim}Q", fh.read(8 * ndim)) if ndim else ()
        dtype = DTYPE_CODES[code]
        n = int(np.prod(dims, dtype=np.int64)) if dims else 1
        data = fh.read(n * dtype.itemsize)
        if len(data) != n * dtype.itemsize:
            raise ValueError("truncated array data")
        arr = np.frombuffer(data, dtype=dtype).reshape(dims)
        out[name] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return out


def write_arrays(path: str, arrays: Mapping[str, np.ndarray]) -> None:
    buf = io.BytesIO()
    buf.write(MAGIC)
    write_block(buf, arrays)
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def read_arrays(path: str) -> Dict[str, np.ndarray]:
    with open(path, "rb") as fh:
        if fh.read(len(MAGIC)) != MAGIC:
            raise ValueError(f"{path}: not an array file")
        return read_block(fh)
