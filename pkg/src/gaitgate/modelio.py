"""Binary model checkpoint format.

Layout (all integers little-endian):

    magic "GAIT" | u32 version=1 | u32 tensor_count
    per tensor: u16 name_len | name UTF-8 | u8 rank | u32 dims[rank]
                | float32 LE row-major values
    trailing u32 CRC32 of every preceding byte

The byte layout is normative: a model written here must load bit-identically
from any other implementation of the format. Failure modes are distinct
exception types so callers can tell a wrong file from a damaged one.
"""

from __future__ import annotations

import struct
import zlib
from pathlib import Path

import numpy as np

from .encoder import ParameterSet

MAGIC = b"GAIT"
VERSION = 1


class ModelFormatError(ValueError):
    """Base class for model file problems."""


class BadMagicError(ModelFormatError):
    pass


class VersionMismatchError(ModelFormatError):
    pass


class TruncatedFileError(ModelFormatError):
    pass


class ChecksumError(ModelFormatError):
    pass


def save_params(params: ParameterSet, path: Path) -> None:
    """Write a ParameterSet; values are cast to float32, the on-disk dtype."""
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    buf += struct.pack("<I", len(params))
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name!r}")
        if tensor.ndim > 0xFF:
            raise ValueError(f"tensor rank {tensor.ndim} exceeds format limit")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", tensor.ndim)
        for dim in tensor.shape:
            buf += struct.pack("<I", dim)
        buf += np.ascontiguousarray(tensor, dtype="<f4").tobytes()
    buf += struct.pack("<I", zlib.crc32(buf) & 0xFFFFFFFF)
    Path(path).write_bytes(bytes(buf))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(
                f"unexpected end of file at byte {self.pos} "
                f"(wanted {n} more, have {len(self.data) - self.pos})"
            )
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack("<H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]


def load_params(path: Path) -> ParameterSet:
    """Read a model file, verifying magic, version, structure and CRC."""
    data = Path(path).read_bytes()
    r = _Reader(data)
    magic = r.take(4)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = r.u32()
    if version != VERSION:
        raise VersionMismatchError(f"unsupported version {version}, expected {VERSION}")
    count = r.u32()
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        name_len = r.u16()
        name = r.take(name_len).decode("utf-8")
        rank = r.u8()
        shape = tuple(r.u32() for _ in range(rank))
        n_values = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = r.take(4 * n_values)
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    stored_crc = r.u32()
    if r.pos != len(data):
        raise TruncatedFileError(
            f"{len(data) - r.pos} trailing bytes after checksum"
        )
    computed = zlib.crc32(data[: r.pos - 4]) & 0xFFFFFFFF
    if stored_crc != computed:
        raise ChecksumError(
            f"CRC mismatch: stored {stored_crc:#010x}, computed {computed:#010x}"
        )
    return ParameterSet(tensors)
