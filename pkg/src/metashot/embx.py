"""EMBX binary tensor container, little-endian throughout.

Layout::

    magic   4 bytes  b"EMBX"
    version u32      1
    dtype   u32      0 = float32 little-endian
    ndim    u32
    dims    ndim x u64
    payload row-major float32 values (4 * prod(dims) bytes)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import FormatError

MAGIC = b"EMBX"
VERSION = 1
DTYPE_F32 = 0

_HEADER = struct.Struct("<4sIII")


def write_embx(path: str | Path, array: np.ndarray) -> None:
    """Write a tensor as a float32 EMBX container."""
    arr = np.ascontiguousarray(np.asarray(array), dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, VERSION, DTYPE_F32, arr.ndim))
        fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        fh.write(arr.tobytes())


def read_header(path: str | Path) -> dict:
    """Parse and validate just the container header."""
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(_HEADER.size)
        if len(raw) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, dtype, ndim = _HEADER.unpack(raw)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != VERSION:
            raise FormatError(f"{path}: unknown version {version}")
        if dtype != DTYPE_F32:
            raise FormatError(f"{path}: unknown dtype code {dtype}")
        dims_raw = fh.read(8 * ndim)
        if len(dims_raw) < 8 * ndim:
            raise FormatError(f"{path}: truncated dims")
        dims = struct.unpack(f"<{ndim}Q", dims_raw)
    return {"version": version, "dtype": dtype, "ndim": ndim, "dims": dims}


def read_embx(path: str | Path) -> np.ndarray:
    """Read an EMBX container into a float32 array; rejects non-finite payloads."""
    path = Path(path)
    header = read_header(path)
    dims = header["dims"]
    count = int(np.prod(dims, dtype=np.uint64)) if dims else 1
    offset = _HEADER.size + 8 * header["ndim"]
    with open(path, "rb") as fh:
        fh.seek(offset)
        payload = fh.read()
    if len(payload) != 4 * count:
        raise FormatError(
            f"{path}: payload is {len(payload)} bytes, expected {4 * count} for dims {dims}"
        )
    arr = np.frombuffer(payload, dtype="<f4").reshape(dims)
    finite = np.isfinite(arr)
    if not finite.all():
        idx = int(np.flatnonzero(~finite.ravel())[0])
        raise FormatError(f"{path}: non-finite value at flat index {idx}")
    return arr.copy()
