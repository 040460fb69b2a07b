"""Binary array container (``TWSR0001``) with bit-exact round trips.

Layout, all little endian::

    8 bytes   magic b"TWSR0001"
    u32       ndim
    u32[ndim] dims
    u8        dtype code (0 = float64, 1 = complex128 stored as re, im pairs)
    payload   row-major values
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"TWSR0001"
_CODES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


class ArrayFormatError(ValueError):
    """The file is not a valid TWSR container."""


def encode_array(a) -> bytes:
    a = np.asarray(a)
    if np.iscomplexobj(a):
        code, data = 1, np.ascontiguousarray(a, dtype="<c16")
    elif a.dtype.kind in "biuf":
        code, data = 0, np.ascontiguousarray(a, dtype="<f8")
    else:
        raise TypeError(f"unsupported dtype {a.dtype}")
    header = MAGIC + struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape) + struct.pack("<B", code)
    return header + data.tobytes()


def decode_array(buf: bytes) -> np.ndarray:
    if len(buf) < 13 or buf[:8] != MAGIC:
        raise ArrayFormatError("bad magic")
    (ndim,) = struct.unpack_from("<I", buf, 8)
    off = 12 + 4 * ndim
    if len(buf) < off + 1:
        raise ArrayFormatError("truncated header")
    dims = struct.unpack_from(f"<{ndim}I", buf, 12)
    (code,) = struct.unpack_from("<B", buf, off)
    if code not in _CODES:
        raise ArrayFormatError(f"unknown dtype code {code}")
    dtype = _CODES[code]
    count = int(np.prod(dims, dtype=np.int64))
    payload = buf[off + 1:]
    if len(payload) != count * dtype.itemsize:
        raise ArrayFormatError(f"payload has {len(payload)} bytes, expected {count * dtype.itemsize}")
    out = np.frombuffer(payload, dtype=dtype, count=count).reshape(dims)
    return out.astype(dtype.newbyteorder("="), copy=True)


def write_array(path: str | Path, a) -> None:
    """Write ``a`` as float64 or complex128 (integers and bools become float64)."""
    Path(path).write_bytes(encode_array(a))


def read_array(path: str | Path) -> np.ndarray:
    return decode_array(Path(path).read_bytes())
