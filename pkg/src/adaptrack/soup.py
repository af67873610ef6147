"""Float32 tensor archives and weight-averaging recipes.

The archive is the checkpoint interchange format between training runs
and this toolkit: a fixed 16-byte header, name-sorted tensor entries,
then key-sorted string metadata. Ordering is canonical, so equal
archives serialize to identical bytes. Averaging accumulates in float64
and casts back to float32 at the end.
"""

from __future__ import annotations

import hashlib
import json
import shlex
import struct
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ArchiveError,
    BadMagicError,
    CorruptArchiveError,
    ExternalCommandError,
    IncompatibleArchivesError,
    TruncatedArchiveError,
    UnsupportedVersionError,
    ValidationError,
)

MAGIC = b"TARC"
VERSION = 1
MAX_RANK = 8

# magic | version u16 | entry_count u32 | metadata_count u32 | reserved u16
_HEADER = struct.Struct("<4sHIIH")
_NAME_LEN = struct.Struct("<H")
_RANK = struct.Struct("<B")
_DIM = struct.Struct("<Q")
_VALUE_LEN = struct.Struct("<I")


def _check_name(name: str, what: str) -> None:
    if not isinstance(name, str) or not name:
        raise ValidationError(f"{what} must be a non-empty string, got {name!r}")
    if any(ord(ch) < 0x20 for ch in name):
        raise ValidationError(f"{what} {name!r} contains control characters")
    if len(name.encode("utf-8")) > 0xFFFF:
        raise ValidationError(f"{what} {name!r} is too long")


class TensorArchive:
    """An ordered mapping of tensor names to float32 arrays, plus metadata."""

    def __init__(
        self,
        tensors: Mapping[str, np.ndarray],
        metadata: Mapping[str, str] | None = None,
    ):
        self._tensors: dict[str, np.ndarray] = {}
        for name in sorted(tensors):
            _check_name(name, "tensor name")
            arr = np.asarray(tensors[name], dtype=np.float32)
            if arr.ndim == 0:
                arr = arr.reshape(1)
            if arr.ndim > MAX_RANK:
                raise ValidationError(
                    f"tensor {name!r} has rank {arr.ndim}, max is {MAX_RANK}"
                )
            if any(d < 1 for d in arr.shape):
                raise ValidationError(
                    f"tensor {name!r} has an empty dimension: {arr.shape}"
                )
            self._tensors[name] = np.ascontiguousarray(arr)
        self._metadata: dict[str, str] = {}
        for key in sorted(metadata or {}):
            _check_name(key, "metadata key")
            value = (metadata or {})[key]
            if not isinstance(value, str):
                raise ValidationError(f"metadata value for {key!r} must be a string")
            self._metadata[key] = value

    @property
    def metadata(self) -> dict[str, str]:
        return dict(self._metadata)

    def names(self) -> list[str]:
        return list(self._tensors)

    def tensor(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def items(self) -> Iterable[tuple[str, np.ndarray]]:
        return self._tensors.items()

    def signature(self) -> dict[str, tuple[int, ...]]:
        return {name: arr.shape for name, arr in self._tensors.items()}

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TensorArchive):
            return NotImplemented
        if self._metadata != other._metadata:
            return False
        if self.signature() != other.signature():
            return False
        return all(
            np.array_equal(arr, other._tensors[name])
            for name, arr in self._tensors.items()
        )

    def content_hash(self) -> str:
        """sha256 of the canonical serialization."""
        return hashlib.sha256(to_bytes(self)).hexdigest()

    def ingredient_id(self) -> str:
        """Short stable id: explicit metadata "id" or a content-hash prefix."""
        return self._metadata.get("id") or self.content_hash()[:12]


def to_bytes(archive: TensorArchive) -> bytes:
    out = bytearray()
    out += _HEADER.pack(MAGIC, VERSION, len(archive), len(archive.metadata), 0)
    for name, arr in archive.items():
        encoded = name.encode("utf-8")
        out += _NAME_LEN.pack(len(encoded))
        out += encoded
        out += _RANK.pack(arr.ndim)
        for dim in arr.shape:
            out += _DIM.pack(dim)
        out += arr.astype("<f4", copy=False).tobytes()
    for key, value in archive.metadata.items():
        k = key.encode("utf-8")
        v = value.encode("utf-8")
        out += _NAME_LEN.pack(len(k))
        out += k
        out += _VALUE_LEN.pack(len(v))
        out += v
    return bytes(out)


def write_archive(archive: TensorArchive, stream: IO[bytes]) -> int:
    """Serialize to a binary stream; returns the byte count."""
    data = to_bytes(archive)
    stream.write(data)
    return len(data)


def write_archive_file(archive: TensorArchive, path: str | Path) -> int:
    with open(path, "wb") as fh:
        return write_archive(archive, fh)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedArchiveError(
                f"archive ended inside {what} (need {n} bytes at offset {self.pos})"
            )
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: struct.Struct, what: str):
        return fmt.unpack(self.take(fmt.size, what))


def from_bytes(data: bytes) -> TensorArchive:
    reader = _Reader(data)
    magic, version, entry_count, meta_count, reserved = reader.unpack(
        _HEADER, "header"
    )
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}")
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported archive version {version}")
    if reserved != 0:
        raise CorruptArchiveError(f"reserved header field is {reserved}, expected 0")

    tensors: dict[str, np.ndarray] = {}
    prev_name: str | None = None
    for _ in range(entry_count):
        (name_len,) = reader.unpack(_NAME_LEN, "entry name length")
        if name_len < 1:
            raise CorruptArchiveError("empty tensor name")
        raw_name = reader.take(name_len, "entry name")
        try:
            name = raw_name.decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptArchiveError(f"tensor name is not UTF-8: {raw_name!r}") from None
        if any(ord(ch) < 0x20 for ch in name):
            raise CorruptArchiveError(f"tensor name {name!r} contains control characters")
        if prev_name is not None and name <= prev_name:
            raise CorruptArchiveError(
                f"tensor names out of order: {prev_name!r} then {name!r}"
            )
        prev_name = name
        (rank,) = reader.unpack(_RANK, "entry rank")
        if rank < 1 or rank > MAX_RANK:
            raise CorruptArchiveError(f"tensor {name!r} has invalid rank {rank}")
        dims = []
        for _ in range(rank):
            (dim,) = reader.unpack(_DIM, "entry dims")
            if dim < 1:
                raise CorruptArchiveError(f"tensor {name!r} has an empty dimension")
            dims.append(dim)
        count = 1
        for dim in dims:
            count *= dim
            if count > (1 << 40):
                raise CorruptArchiveError(f"tensor {name!r} is implausibly large")
        payload = reader.take(4 * count, f"payload of {name!r}")
        tensors[name] = np.frombuffer(payload, dtype="<f4").reshape(dims).copy()

    metadata: dict[str, str] = {}
    prev_key: str | None = None
    for _ in range(meta_count):
        (key_len,) = reader.unpack(_NAME_LEN, "metadata key length")
        if key_len < 1:
            raise CorruptArchiveError("empty metadata key")
        try:
            key = reader.take(key_len, "metadata key").decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptArchiveError("metadata key is not UTF-8") from None
        if prev_key is not None and key <= prev_key:
            raise CorruptArchiveError(
                f"metadata keys out of order: {prev_key!r} then {key!r}"
            )
        prev_key = key
        (value_len,) = reader.unpack(_VALUE_LEN, "metadata value length")
        try:
            value = reader.take(value_len, "metadata value").decode("utf-8")
        except UnicodeDecodeError:
            raise CorruptArchiveError(f"metadata value for {key!r} is not UTF-8") from None
        metadata[key] = value

    if reader.pos != len(data):
        raise CorruptArchiveError(
            f"{len(data) - reader.pos} trailing bytes after archive content"
        )
    return TensorArchive(tensors, metadata)


def read_archive(stream: IO[bytes]) -> TensorArchive:
    return from_bytes(stream.read())


def read_archive_file(path: str | Path) -> TensorArchive:
    try:
        with open(path, "rb") as fh:
            return read_archive(fh)
    except OSError as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc}") from None


def check_compatible(archives: Sequence[TensorArchive]) -> None:
    """All archives must share tensor names and shapes; raises naming the offender."""
    if not archives:
        raise ValidationError("no archives given")
    reference = archives[0].signature()
    for idx, archive in enumerate(archives[1:], start=1):
        sig = archive.signature()
        if sig.keys() != reference.keys():
            missing = sorted(reference.keys() ^ sig.keys())
            raise IncompatibleArchivesError(
                f"archive {idx} tensor names differ (first mismatch: {missing[0]!r})"
            )
        for name, shape in reference.items():
            if sig[name] != shape:
                raise IncompatibleArchivesError(
                    f"archive {idx} tensor {name!r} has shape {sig[name]}, expected {shape}"
                )


def _lineage(archives: Sequence[TensorArchive]) -> str:
    return ",".join(sorted(a.ingredient_id() for a in archives))


def _mean(archives: Sequence[TensorArchive], metadata: Mapping[str, str]) -> TensorArchive:
    n = len(archives)
    tensors = {}
    for name in archives[0].names():
        acc = np.zeros(archives[0].tensor(name).shape, dtype=np.float64)
        for archive in archives:
            acc += archive.tensor(name).astype(np.float64)
        tensors[name] = (acc / n).astype(np.float32)
    return TensorArchive(tensors, metadata)


def uniform_soup(archives: Sequence[TensorArchive]) -> TensorArchive:
    """Element-wise mean of the ingredient weights.

    Accumulation runs in float64 and the order of ingredients does not
    affect the result metadata: lineage is a sorted id list.
    """
    check_compatible(archives)
    ordered = sorted(archives, key=lambda a: a.ingredient_id())
    metadata = {"soup": "uniform", "ingredients": _lineage(archives)}
    return _mean(ordered, metadata)


def ema_update(running: TensorArchive, new: TensorArchive, decay: float) -> TensorArchive:
    """Exponential moving average: decay * running + (1 - decay) * new."""
    if not 0.0 <= decay <= 1.0:
        raise ValidationError(f"decay must lie in [0, 1], got {decay}")
    check_compatible([running, new])
    tensors = {}
    for name in running.names():
        blended = decay * running.tensor(name).astype(np.float64) + (
            1.0 - decay
        ) * new.tensor(name).astype(np.float64)
        tensors[name] = blended.astype(np.float32)
    return TensorArchive(tensors, running.metadata)


@dataclass(frozen=True)
class IngredientLog:
    ingredient_id: str
    val_score: float
    accepted: bool
    score: float  # evaluator score of the pot tried with this ingredient


@dataclass(frozen=True)
class SoupResult:
    archive: TensorArchive
    log: tuple[IngredientLog, ...]
    final_score: float

    def to_dict(self) -> dict:
        return {
            "final_score": self.final_score,
            "ingredients": [
                {
                    "id": entry.ingredient_id,
                    "val_score": entry.val_score,
                    "accepted": entry.accepted,
                    "score": entry.score,
                }
                for entry in self.log
            ],
        }


def greedy_soup(
    candidates: Sequence[tuple[TensorArchive, float]],
    evaluator: Callable[[TensorArchive], float],
    strict: bool = False,
) -> SoupResult:
    """Greedy soup construction.

    Candidates are visited in descending val-score order (stable for
    ties). The pot starts with the best candidate; each later one joins
    iff the evaluator likes the tentative mean at least as much as the
    current pot (strictly more with strict=True). The log records every
    candidate in visit order.
    """
    if not candidates:
        raise ValidationError("greedy soup needs at least one candidate")
    check_compatible([archive for archive, _ in candidates])
    ordered = sorted(
        enumerate(candidates), key=lambda item: (-item[1][1], item[0])
    )

    def score_of(archives: list[TensorArchive], ingredient: str) -> float:
        pot = _mean(archives, {}) if len(archives) > 1 else archives[0]
        try:
            return float(evaluator(pot))
        except Exception as exc:
            raise ExternalCommandError(
                f"evaluator failed for ingredient {ingredient}: {exc}"
            ) from exc

    first_archive, first_val = ordered[0][1]
    accepted = [first_archive]
    best_score = score_of(accepted, first_archive.ingredient_id())
    log = [IngredientLog(first_archive.ingredient_id(), first_val, True, best_score)]

    for _, (archive, val_score) in ordered[1:]:
        ingredient = archive.ingredient_id()
        tentative = accepted + [archive]
        score = score_of(tentative, ingredient)
        take = score > best_score if strict else score >= best_score
        log.append(IngredientLog(ingredient, val_score, take, score))
        if take:
            accepted = tentative
            best_score = score

    final = _mean(
        accepted,
        {"soup": "greedy", "ingredients": _lineage(accepted)},
    ) if len(accepted) > 1 else TensorArchive(
        dict(accepted[0].items()),
        {"soup": "greedy", "ingredients": _lineage(accepted)},
    )
    return SoupResult(final, tuple(log), best_score)


def make_command_evaluator(command: str) -> Callable[[TensorArchive], float]:
    """Wrap an external scoring command: cmd <archive.tarc> -> float on stdout."""
    argv = shlex.split(command)
    if not argv:
        raise ValidationError("empty evaluator command")

    def evaluate_archive(archive: TensorArchive) -> float:
        with tempfile.TemporaryDirectory(prefix="soup-eval-") as tmp:
            path = Path(tmp) / "candidate.tarc"
            write_archive_file(archive, path)
            return run_scoring_command(argv, path)

    return evaluate_archive


def run_scoring_command(argv: Sequence[str], archive_path: str | Path) -> float:
    """Run argv + [archive_path]; expect a decimal score on stdout."""
    try:
        proc = subprocess.run(
            list(argv) + [str(archive_path)],
            capture_output=True,
            text=True,
        )
    except OSError as exc:
        raise ExternalCommandError(f"cannot run {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-1:] or [""]
        raise ExternalCommandError(
            f"{argv[0]!r} exited {proc.returncode}: {tail[0]}",
            returncode=proc.returncode,
        )
    try:
        return float(proc.stdout.strip().split()[-1])
    except (ValueError, IndexError):
        raise ExternalCommandError(
            f"{argv[0]!r} did not print a numeric score (got {proc.stdout.strip()!r})"
        ) from None
