"""Standalone writer for the quantizer's tensor file format.

The exporter talks to the quantizer only through files, so the byte
layout is implemented here against the documented format rather than
imported: magic ``COMQTNSR``, uint32 little-endian version (1), a dtype
byte (0 float32, 1 int8, 2 int32), a rank byte, ``rank`` uint64
little-endian dims, then the row-major little-endian payload. The
format contract is pinned by a byte-for-byte test against the
quantizer's own writer.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"COMQTNSR"
FORMAT_VERSION = 1

_DTYPE_CODES = {
    np.dtype("<f4"): 0,
    np.dtype("<i1"): 1,
    np.dtype("<i4"): 2,
}


def write_tensor(path: str | Path, array: np.ndarray) -> None:
    arr = np.asarray(array)
    if arr.dtype not in _DTYPE_CODES:
        raise ValueError(f"unsupported dtype {arr.dtype}; "
                         f"use float32, int8, or int32")
    if not arr.flags.c_contiguous:
        arr = np.ascontiguousarray(arr)
    header = struct.pack("<8sIBB", MAGIC, FORMAT_VERSION,
                         _DTYPE_CODES[arr.dtype], arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(dims)
        fh.write(arr.tobytes())
