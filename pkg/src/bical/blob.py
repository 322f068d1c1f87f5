"""Binary container for named numpy arrays.

Layout (all integers little-endian)::

    magic    4 bytes   b"BCNB"
    version  uint32    currently 1
    count    uint32    number of arrays
    then, per array:
      name_len uint16, name utf-8 bytes
      dtype    uint8   0=float64 1=int64 2=uint64 3=uint8
      ndim     uint8
      shape    ndim x uint64
      data     row-major, little-endian

float64 payloads round-trip bit-exactly.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError

MAGIC = b"BCNB"
VERSION = 1
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<i8"), 2: np.dtype("<u8"), 3: np.dtype("u1")}
_CODES = {v.kind + str(v.itemsize): k for k, v in _DTYPES.items()}


def _code_for(arr: np.ndarray) -> int:
    key = arr.dtype.kind + str(arr.dtype.itemsize)
    if key not in _CODES:
        raise TypeError(f"unsupported dtype {arr.dtype}")
    return _CODES[key]


def dumps(arrays: dict[str, np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<II", VERSION, len(arrays))]
    for name, arr in arrays.items():
        arr = np.asarray(arr)
        code = _code_for(arr)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)))
        parts.append(raw)
        parts.append(struct.pack("<BB", code, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes())
    return b"".join(parts)


def loads(data: bytes, path=None) -> dict[str, np.ndarray]:
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(data):
            raise ParseError(f"truncated while reading {what}", path=path, offset=pos)
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    if take(4, "magic") != MAGIC:
        raise ParseError("bad magic bytes", path=path, offset=0)
    version, count = struct.unpack("<II", take(8, "header"))
    if version != VERSION:
        raise ParseError(f"unsupported version {version}", path=path, offset=4)
    out = {}
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2, "name length"))
        name = take(name_len, "name").decode("utf-8")
        code, ndim = struct.unpack("<BB", take(2, "dtype"))
        if code not in _DTYPES:
            raise ParseError(f"unknown dtype code {code}", path=path, offset=pos - 2)
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim, "shape"))
        dtype = _DTYPES[code]
        nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        buf = take(nbytes, f"data of {name!r}")
        out[name] = np.frombuffer(buf, dtype=dtype).reshape(shape).astype(dtype.newbyteorder("="))
    if pos != len(data):
        raise ParseError("trailing bytes after last array", path=path, offset=pos)
    return out


def save(path, arrays: dict[str, np.ndarray]) -> None:
    Path(path).write_bytes(dumps(arrays))


def load(path) -> dict[str, np.ndarray]:
    return loads(Path(path).read_bytes(), path=path)
