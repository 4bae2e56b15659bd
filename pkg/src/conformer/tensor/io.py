"""CFKT binary tensor format.

Layout: magic ``b"CFKT"``, ``u8`` dtype code (0 = f64, 1 = f32), ``u8`` rank,
``rank`` little-endian ``u64`` extents, then the row-major little-endian payload.
"""

from __future__ import annotations

import struct

import numpy as np

from ..errors import FormatError
from .tensor import Tensor

MAGIC = b"CFKT"
_CODES = {np.dtype(np.float64): 0, np.dtype(np.float32): 1}
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<f4")}


def payload_bytes(array) -> bytes:
    array = np.asarray(array)
    return np.ascontiguousarray(array, dtype=array.dtype.newbyteorder("<")).tobytes()


def encode_tensor(t) -> bytes:
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    try:
        code = _CODES[data.dtype]
    except KeyError:
        raise FormatError("dtype", f"cannot encode {data.dtype}") from None
    if data.ndim > 255:
        raise FormatError("rank", f"rank {data.ndim} exceeds 255")
    head = MAGIC + struct.pack("<BB", code, data.ndim) + struct.pack(f"<{data.ndim}Q", *data.shape)
    return head + payload_bytes(data)


def decode_tensor(buf: bytes, offset: int = 0):
    """Decode one tensor starting at ``offset``; returns ``(Tensor, next_offset)``."""
    if buf[offset:offset + 4] != MAGIC:
        raise FormatError("magic", f"expected {MAGIC!r}, got {bytes(buf[offset:offset + 4])!r}")
    if len(buf) < offset + 6:
        raise FormatError("header", "truncated header")
    code, rank = struct.unpack_from("<BB", buf, offset + 4)
    if code not in _DTYPES:
        raise FormatError("dtype", f"unknown dtype code {code}")
    pos = offset + 6
    if len(buf) < pos + 8 * rank:
        raise FormatError("dims", "truncated dimension list")
    dims = struct.unpack_from(f"<{rank}Q", buf, pos)
    pos += 8 * rank
    dtype = _DTYPES[code]
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    end = pos + count * dtype.itemsize
    if len(buf) < end:
        raise FormatError("payload", f"expected {count} values, file is truncated")
    data = np.frombuffer(buf, dtype=dtype, count=count, offset=pos).reshape(dims)
    native = dtype.newbyteorder("=")
    return Tensor(data.astype(native), dtype=native), end


def save_tensor(path, t):
    with open(path, "wb") as fh:
        fh.write(encode_tensor(t))


def load_tensor(path) -> Tensor:
    with open(path, "rb") as fh:
        buf = fh.read()
    t, end = decode_tensor(buf)
    if end != len(buf):
        raise FormatError("payload", f"{len(buf) - end} trailing bytes")
    return t
