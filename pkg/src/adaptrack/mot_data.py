"""MOT-style file I/O and core box geometry.

Three text formats are exchanged with detectors and benchmark tooling:
per-frame detection files, ground-truth / tracker result files, and
seqinfo.ini sequence descriptors. Coordinates are continuous pixels with
the origin at the top-left; frame indices are 1-based throughout.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, Sequence

from .errors import ParseError, ValidationError

# Default class filter for ground truth: pedestrians only.
DEFAULT_KEEP_CLASSES = frozenset({1})


@dataclass(frozen=True)
class BBox:
    """Axis-aligned box: top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        for name in ("x", "y", "w", "h"):
            value = getattr(self, name)
            if not isinstance(value, (int, float)) or not math.isfinite(value):
                raise ValidationError(f"bbox field {name} must be finite, got {value!r}")
        if self.w <= 0 or self.h <= 0:
            raise ValidationError(
                f"bbox must have positive size, got w={self.w}, h={self.h}"
            )

    @property
    def area(self) -> float:
        return self.w * self.h

    @property
    def cx(self) -> float:
        return self.x + self.w / 2.0

    @property
    def cy(self) -> float:
        return self.y + self.h / 2.0


@dataclass(frozen=True)
class Detection:
    """One detector output box on one frame."""

    frame: int
    bbox: BBox
    confidence: float

    def __post_init__(self):
        if self.frame < 1:
            raise ValidationError(f"frame index must be >= 1, got {self.frame}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"confidence must lie in [0, 1], got {self.confidence}"
            )


@dataclass(frozen=True)
class TrackRecord:
    """One identity on one frame, as found in GT and result files."""

    frame: int
    track_id: int
    bbox: BBox
    confidence: float = 1.0
    class_id: int = 1
    visibility: float = 1.0

    def __post_init__(self):
        if self.frame < 1:
            raise ValidationError(f"frame index must be >= 1, got {self.frame}")
        if self.track_id < 1:
            raise ValidationError(f"track id must be >= 1, got {self.track_id}")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(
                f"confidence must lie in [0, 1], got {self.confidence}"
            )
        if not 0.0 <= self.visibility <= 1.0:
            raise ValidationError(
                f"visibility must lie in [0, 1], got {self.visibility}"
            )


@dataclass(frozen=True)
class SequenceInfo:
    """Contents of a seqinfo.ini [Sequence] section."""

    name: str
    frame_count: int
    width: int
    height: int
    frame_rate: float
    image_dir: str = "img1"
    image_ext: str = ".jpg"

    def __post_init__(self):
        if self.frame_count < 1:
            raise ValidationError(f"seqLength must be >= 1, got {self.frame_count}")
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"image size must be >= 1, got {self.width}x{self.height}"
            )
        if not math.isfinite(self.frame_rate) or self.frame_rate <= 0:
            raise ValidationError(f"frameRate must be positive, got {self.frame_rate}")


class ParsedDetections(Sequence[Detection]):
    """Ordered detections plus counters for lines the parser cleaned up.

    clamped_count: confidences pulled back into [0, 1].
    rejected_count: lines dropped for non-positive size or frame < 1.
    """

    def __init__(self, detections: list[Detection], clamped: int, rejected: int):
        self._detections = detections
        self.clamped_count = clamped
        self.rejected_count = rejected

    def __len__(self) -> int:
        return len(self._detections)

    def __getitem__(self, index):
        return self._detections[index]

    def __iter__(self) -> Iterator[Detection]:
        return iter(self._detections)

    def frames(self) -> dict[int, list[Detection]]:
        return group_by_frame(self._detections)


class ParsedTracks(Sequence[TrackRecord]):
    """Ordered track records plus the same cleanup counters."""

    def __init__(self, records: list[TrackRecord], clamped: int, rejected: int):
        self._records = records
        self.clamped_count = clamped
        self.rejected_count = rejected

    def __len__(self) -> int:
        return len(self._records)

    def __getitem__(self, index):
        return self._records[index]

    def __iter__(self) -> Iterator[TrackRecord]:
        return iter(self._records)


def _float_fields(parts: list[str], count: int, lineno: int) -> list[float]:
    values = []
    for raw in parts[:count]:
        try:
            value = float(raw)
        except ValueError:
            raise ParseError(f"non-numeric field {raw.strip()!r}", lineno) from None
        if not math.isfinite(value):
            raise ParseError(f"non-finite field {raw.strip()!r}", lineno)
        values.append(value)
    return values


def _int_field(value: float, name: str, lineno: int) -> int:
    if value != int(value):
        raise ParseError(f"{name} must be an integer, got {value}", lineno)
    return int(value)


def _clamp01(value: float) -> float:
    return min(1.0, max(0.0, value))


def parse_detections(stream: Iterable[str]) -> ParsedDetections:
    """Parse a detection file: frame,-1,x,y,w,h,conf[,...] per line.

    Malformed lines (too few fields, non-numeric, non-finite, fractional
    frame index) raise ParseError with the line number. Lines with
    non-positive width/height or frame < 1 are dropped and counted;
    out-of-range confidences are clamped into [0, 1] and counted.
    """
    detections: list[Detection] = []
    clamped = 0
    rejected = 0
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 7:
            raise ParseError(f"expected at least 7 fields, got {len(parts)}", lineno)
        values = _float_fields(parts, 7, lineno)
        frame = _int_field(values[0], "frame", lineno)
        x, y, w, h, conf = values[2:7]
        if w <= 0 or h <= 0 or frame < 1:
            rejected += 1
            continue
        if conf < 0.0 or conf > 1.0:
            conf = _clamp01(conf)
            clamped += 1
        detections.append(Detection(frame, BBox(x, y, w, h), conf))
    return ParsedDetections(detections, clamped, rejected)


def parse_ground_truth(
    stream: Iterable[str],
    keep_classes: frozenset[int] | set[int] | None = DEFAULT_KEEP_CLASSES,
    *,
    require_flag: bool = True,
) -> ParsedTracks:
    """Parse a GT or result file: frame,id,x,y,w,h,flag_or_conf,class,vis.

    GT semantics by default: records whose class is not in keep_classes or
    whose consider-flag is 0 are skipped. Pass keep_classes=None and
    require_flag=False to read tracker result files verbatim (field 7 is a
    confidence there). Duplicate (frame, id) pairs among kept records raise
    ValidationError; degenerate boxes are dropped and counted like the
    detection parser does.
    """
    records: list[TrackRecord] = []
    clamped = 0
    rejected = 0
    seen: dict[tuple[int, int], int] = {}
    for lineno, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line:
            continue
        parts = line.split(",")
        if len(parts) < 9:
            raise ParseError(f"expected at least 9 fields, got {len(parts)}", lineno)
        values = _float_fields(parts, 9, lineno)
        frame = _int_field(values[0], "frame", lineno)
        track_id = _int_field(values[1], "id", lineno)
        class_id = _int_field(values[7], "class", lineno)
        x, y, w, h = values[2:6]
        flag_or_conf = values[6]
        visibility = values[8]
        if require_flag and flag_or_conf == 0:
            continue
        if keep_classes is not None and class_id not in keep_classes:
            continue
        if w <= 0 or h <= 0 or frame < 1 or track_id < 1:
            rejected += 1
            continue
        if not 0.0 <= flag_or_conf <= 1.0:
            flag_or_conf = _clamp01(flag_or_conf)
            clamped += 1
        if not 0.0 <= visibility <= 1.0:
            visibility = _clamp01(visibility)
            clamped += 1
        key = (frame, track_id)
        if key in seen:
            raise ValidationError(
                f"duplicate (frame, id) = {key}: lines {seen[key]} and {lineno}"
            )
        seen[key] = lineno
        records.append(
            TrackRecord(frame, track_id, BBox(x, y, w, h), flag_or_conf, class_id, visibility)
        )
    return ParsedTracks(records, clamped, rejected)


def _fmt(value: float) -> str:
    # repr() round-trips floats exactly; integers print without the '.0'.
    if float(value).is_integer() and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


def write_annotations(records: Iterable[TrackRecord], stream: IO[str]) -> int:
    """Write records in GT/result format, sorted by (frame, id).

    Returns the number of bytes written (the output is pure ASCII).
    Floats are written with repr() so parse(write(x)) round-trips exactly.
    """
    written = 0
    for rec in sorted(records, key=lambda r: (r.frame, r.track_id)):
        line = ",".join(
            (
                str(rec.frame),
                str(rec.track_id),
                _fmt(rec.bbox.x),
                _fmt(rec.bbox.y),
                _fmt(rec.bbox.w),
                _fmt(rec.bbox.h),
                _fmt(rec.confidence),
                str(rec.class_id),
                _fmt(rec.visibility),
            )
        )
        written += stream.write(line + "\n")
    return written


_SEQ_KEYS = {
    "name": str,
    "seqlength": int,
    "imwidth": int,
    "imheight": int,
    "framerate": float,
}
_SEQ_CANONICAL = {
    "name": "name",
    "seqlength": "seqLength",
    "imwidth": "imWidth",
    "imheight": "imHeight",
    "framerate": "frameRate",
}


def parse_seqinfo(stream: IO[str] | str) -> SequenceInfo:
    """Parse a seqinfo.ini; requires a [Sequence] section with the usual keys."""
    text = stream if isinstance(stream, str) else stream.read()
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ParseError(f"invalid seqinfo: {exc}") from None
    if not parser.has_section("Sequence"):
        raise ParseError("missing [Sequence] section")
    section = parser["Sequence"]
    parsed = {}
    for key, convert in _SEQ_KEYS.items():
        if key not in section:
            raise ParseError(f"missing required key {_SEQ_CANONICAL[key]!r}")
        try:
            parsed[key] = convert(section[key])
        except ValueError:
            raise ParseError(
                f"bad value for {_SEQ_CANONICAL[key]!r}: {section[key]!r}"
            ) from None
    return SequenceInfo(
        name=parsed["name"],
        frame_count=parsed["seqlength"],
        width=parsed["imwidth"],
        height=parsed["imheight"],
        frame_rate=parsed["framerate"],
        image_dir=section.get("imdir", "img1"),
        image_ext=section.get("imext", ".jpg"),
    )


def iou(a: BBox, b: BBox) -> float:
    """Intersection-over-union of two boxes; always in [0, 1]."""
    if a == b:
        # Identity shortcut: float sums below are not exact for all inputs.
        return 1.0
    ix = min(a.x + a.w, b.x + b.w) - max(a.x, b.x)
    if ix <= 0:
        return 0.0
    iy = min(a.y + a.h, b.y + b.h) - max(a.y, b.y)
    if iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def group_by_frame(records: Iterable) -> dict[int, list]:
    """Group detections or records by their frame index (keys sorted)."""
    frames: dict[int, list] = {}
    for rec in records:
        frames.setdefault(rec.frame, []).append(rec)
    return dict(sorted(frames.items()))
