"""Reader/writer for the TARC float32 tensor-archive wire format.

Layout (all integers little-endian):

    header   : magic b"TARC" | version u16 | entry count u32 |
               metadata count u32 | reserved u16 (zero)        -- 16 bytes
    entries  : sorted strictly ascending by name;
               name length u16 | name utf-8 | rank u8 (1..8) |
               rank x dim u64 (each >= 1) | float32 payload
    metadata : sorted strictly ascending by key;
               key length u16 | key utf-8 | value length u32 | value utf-8

Writing canonicalizes ordering, so identical content always produces
identical bytes. Scalars are stored with shape (1,); rank 0 does not
exist on the wire.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ArchiveFormatError

MAGIC = b"TARC"
VERSION = 1
MAX_RANK = 8

_HEADER = struct.Struct("<4sHIIH")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")
_DIM = struct.Struct("<Q")
_VALUE_LEN = struct.Struct("<I")


def _check_name(name: str, what: str) -> bytes:
    if not isinstance(name, str) or not name:
        raise ArchiveFormatError(f"{what} must be a non-empty string, got {name!r}")
    if any(ord(ch) < 0x20 for ch in name):
        raise ArchiveFormatError(f"{what} {name!r} contains control characters")
    encoded = name.encode("utf-8")
    if len(encoded) > 0xFFFF:
        raise ArchiveFormatError(f"{what} {name!r} is too long")
    return encoded


def dump(tensors: Mapping[str, np.ndarray], metadata: Mapping[str, str] | None = None) -> bytes:
    """Serialize a name->float32-array mapping plus string metadata."""
    metadata = dict(metadata or {})
    canonical: dict[str, np.ndarray] = {}
    for name in sorted(tensors):
        arr = np.asarray(tensors[name], dtype=np.float32)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > MAX_RANK:
            raise ArchiveFormatError(
                f"tensor {name!r} has rank {arr.ndim}, the format caps rank at {MAX_RANK}"
            )
        if any(d < 1 for d in arr.shape):
            raise ArchiveFormatError(f"tensor {name!r} has an empty dimension: {arr.shape}")
        canonical[name] = np.ascontiguousarray(arr)

    out = bytearray()
    out += _HEADER.pack(MAGIC, VERSION, len(canonical), len(metadata), 0)
    for name, arr in canonical.items():
        encoded = _check_name(name, "tensor name")
        out += _NAME_LEN.pack(len(encoded))
        out += encoded
        out += _RANK.pack(arr.ndim)
        for dim in arr.shape:
            out += _DIM.pack(dim)
        out += arr.astype("<f4", copy=False).tobytes()
    for key in sorted(metadata):
        value = metadata[key]
        if not isinstance(value, str):
            raise ArchiveFormatError(f"metadata value for {key!r} must be a string")
        k = _check_name(key, "metadata key")
        v = value.encode("utf-8")
        out += _NAME_LEN.pack(len(k))
        out += k
        out += _VALUE_LEN.pack(len(v))
        out += v
    return bytes(out)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ArchiveFormatError(
                f"archive ended inside {what} (need {n} bytes at offset {self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))


def load(data: bytes) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    """Parse archive bytes into (tensors, metadata); strict about malformations."""
    cursor = _Cursor(data)
    magic, version, entry_count, meta_count, reserved = cursor.unpack(_HEADER, "header")
    if magic != MAGIC:
        raise ArchiveFormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise ArchiveFormatError(f"unsupported archive version {version}")
    if reserved != 0:
        raise ArchiveFormatError(f"reserved header field is {reserved}, expected 0")

    tensors: dict[str, np.ndarray] = {}
    previous: str | None = None
    for _ in range(entry_count):
        (name_len,) = cursor.unpack(_NAME_LEN, "entry name length")
        if name_len < 1:
            raise ArchiveFormatError("empty tensor name")
        raw = cursor.take(name_len, "entry name")
        try:
            name = raw.decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveFormatError(f"tensor name is not UTF-8: {raw!r}") from None
        if any(ord(ch) < 0x20 for ch in name):
            raise ArchiveFormatError(f"tensor name {name!r} contains control characters")
        if previous is not None and name <= previous:
            raise ArchiveFormatError(
                f"tensor names out of order: {previous!r} then {name!r}"
            )
        previous = name
        (rank,) = cursor.unpack(_RANK, "entry rank")
        if rank < 1 or rank > MAX_RANK:
            raise ArchiveFormatError(f"tensor {name!r} has invalid rank {rank}")
        dims = []
        count = 1
        for _ in range(rank):
            (dim,) = cursor.unpack(_DIM, "entry dims")
            if dim < 1:
                raise ArchiveFormatError(f"tensor {name!r} has an empty dimension")
            dims.append(dim)
            count *= dim
            if count > (1 << 40):
                raise ArchiveFormatError(f"tensor {name!r} is implausibly large")
        payload = cursor.take(4 * count, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

    metadata: dict[str, str] = {}
    previous = None
    for _ in range(meta_count):
        (key_len,) = cursor.unpack(_NAME_LEN, "metadata key length")
        if key_len < 1:
            raise ArchiveFormatError("empty metadata key")
        try:
            key = cursor.take(key_len, "metadata key").decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveFormatError("metadata key is not UTF-8") from None
        if previous is not None and key <= previous:
            raise ArchiveFormatError(
                f"metadata keys out of order: {previous!r} then {key!r}"
            )
        previous = key
        (value_len,) = cursor.unpack(_VALUE_LEN, "metadata value length")
        try:
            value = cursor.take(value_len, "metadata value").decode("utf-8")
        except UnicodeDecodeError:
            raise ArchiveFormatError(f"metadata value for {key!r} is not UTF-8") from None
        metadata[key] = value

    if cursor.pos != len(data):
        raise ArchiveFormatError(
            f"{len(data) - cursor.pos} trailing bytes after archive content"
        )
    return tensors, metadata


def write_file(path: str | Path, tensors: Mapping[str, np.ndarray],
               metadata: Mapping[str, str] | None = None) -> int:
    data = dump(tensors, metadata)
    with open(path, "wb") as fh:
        fh.write(data)
    return len(data)


def read_file(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, str]]:
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ArchiveFormatError(f"cannot read archive {path}: {exc}") from None
    return load(data)
