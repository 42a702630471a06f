"""Single-file binary container: named float64 matrices and uint32 arrays.

Layout (all little-endian):

    12-byte magic | uint32 version | uint32 entry count | entries...

Each entry is a uint32 name length, the UTF-8 name, a kind byte
(0 = float64 matrix, 1 = uint32 array), then the dimensions and raw data:
matrices carry uint64 rows and cols followed by rows*cols float64 values,
arrays carry a uint64 length followed by uint32 values. Bit-exact round
trips and trivially parseable from any language.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .errors import DataFormatError, UnsupportedVersionError

MAGIC = b"EMSTACK.BIN\x00"
VERSION = 1

_KIND_MATRIX = 0
_KIND_U32 = 1


def write_container(path, entries: dict[str, np.ndarray]) -> None:
    """Write named arrays; float arrays must be 2-D float64, ints 1-D uint32."""
    chunks = [MAGIC, struct.pack("<I", VERSION), struct.pack("<I", len(entries))]
    for name, arr in entries.items():
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        arr = np.asarray(arr)
        if arr.dtype == np.float64 and arr.ndim == 2:
            chunks.append(struct.pack("<BQQ", _KIND_MATRIX, *arr.shape))
            chunks.append(np.ascontiguousarray(arr).astype("<f8").tobytes())
        elif arr.dtype == np.uint32 and arr.ndim == 1:
            chunks.append(struct.pack("<BQ", _KIND_U32, arr.shape[0]))
            chunks.append(np.ascontiguousarray(arr).astype("<u4").tobytes())
        else:
            raise DataFormatError(
                f"entry {name!r}: only 2-D float64 or 1-D uint32 supported, "
                f"got {arr.dtype} with shape {arr.shape}"
            )
    Path(path).write_bytes(b"".join(chunks))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise DataFormatError(
                f"truncated container: wanted {n} bytes at offset {self.pos}, "
                f"file has {len(self.data)}"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def read_container(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    reader = _Reader(data)
    if reader.take(len(MAGIC)) != MAGIC:
        raise DataFormatError(f"{path}: bad magic, not a container file")
    (version,) = reader.unpack("<I")
    if version != VERSION:
        raise UnsupportedVersionError(
            f"{path}: container version {version} not supported (expected {VERSION})"
        )
    (count,) = reader.unpack("<I")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        name = reader.take(name_len).decode("utf-8")
        (kind,) = reader.unpack("<B")
        if kind == _KIND_MATRIX:
            rows, cols = reader.unpack("<QQ")
            raw = reader.take(rows * cols * 8)
            entries[name] = np.frombuffer(raw, dtype="<f8").reshape(rows, cols).copy()
        elif kind == _KIND_U32:
            (length,) = reader.unpack("<Q")
            raw = reader.take(length * 4)
            entries[name] = np.frombuffer(raw, dtype="<u4").copy()
        else:
            raise DataFormatError(f"{path}: unknown entry kind {kind}")
    if reader.pos != len(data):
        raise DataFormatError(f"{path}: {len(data) - reader.pos} trailing bytes")
    return entries
