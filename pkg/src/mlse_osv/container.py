"""Binary container shared by network checkpoints and user models.

Layout (little-endian)::

    magic (4 ASCII bytes) + 0x01
    u32   format version
    u32   header length, header bytes (UTF-8 canonical JSON)
    u32   tensor count
    per tensor: u32 name length, name (UTF-8), u32 rank, u32 dims..., float32 payload
    u32   CRC-32 of every preceding byte

Feature matrices use a lighter headerless layout: ``MLSF``, u32 rows,
u32 cols, float32 payload.
"""

from __future__ import annotations

import os
import struct
import tempfile
import zlib
from pathlib import Path

import numpy as np

from .errors import (
    BadMagicError,
    ChecksumError,
    DimensionError,
    TruncatedFileError,
    UnsupportedVersionError,
)

FORMAT_VERSION = 1
FEATURE_MAGIC = b"MLSF"


def atomic_write_bytes(path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))


def _pack_str(s: str) -> bytes:
    b = s.encode("utf-8")
    return struct.pack("<I", len(b)) + b


def encode_container(magic: bytes, header: str, tensors: dict[str, np.ndarray]) -> bytes:
    assert len(magic) == 4
    parts = [magic, b"\x01", struct.pack("<I", FORMAT_VERSION), _pack_str(header)]
    parts.append(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        parts.append(_pack_str(name))
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFileError(f"file truncated: needed {n} bytes at offset {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")


def decode_container(data: bytes, magic: bytes) -> tuple[str, dict[str, np.ndarray]]:
    if len(data) < 5:
        raise TruncatedFileError("file too short to hold a header")
    if data[:4] != magic or data[4:5] != b"\x01":
        raise BadMagicError(f"bad magic: expected {magic!r}+0x01, found {data[:5]!r}")
    r = _Reader(data)
    r.take(5)
    version = r.u32()
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported version {version} (this build reads {FORMAT_VERSION})")
    header = r.string()
    tensors = {}
    for _ in range(r.u32()):
        name = r.string()
        rank = r.u32()
        dims = struct.unpack(f"<{rank}I", r.take(4 * rank))
        count = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(r.take(4 * count), dtype="<f4").reshape(dims)
        tensors[name] = arr.astype(np.float32)
    body_end = r.pos
    stored = r.u32()
    if stored != zlib.crc32(data[:body_end]):
        raise ChecksumError("CRC-32 mismatch: file is corrupted")
    if r.pos != len(data):
        raise ChecksumError(f"{len(data) - r.pos} unexpected trailing bytes")
    return header, tensors


def save_feature_matrix(path, matrix: np.ndarray):
    m = np.ascontiguousarray(matrix, dtype="<f4")
    if m.ndim != 2:
        raise DimensionError(f"feature matrix must be 2-D, got shape {m.shape}")
    atomic_write_bytes(path, FEATURE_MAGIC + struct.pack("<II", *m.shape) + m.tobytes())


def load_feature_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != FEATURE_MAGIC:
        raise BadMagicError(f"bad magic: expected {FEATURE_MAGIC!r}, found {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedFileError("feature file too short")
    rows, cols = struct.unpack("<II", data[4:12])
    if len(data) != 12 + 4 * rows * cols:
        raise TruncatedFileError(f"expected {rows}x{cols} floats, file has {len(data) - 12} payload bytes")
    return np.frombuffer(data[12:], dtype="<f4").reshape(rows, cols).astype(np.float32)
