"""Online tracking-by-detection with confidence-split association.

High-confidence detections are associated first against every live track
(tentative, active, and lost); the low-confidence remainder then gets a
second chance against tracks that are still unmatched but were seen
recently. New tracks spawn only from confident unmatched detections.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, fields
from typing import IO, Iterable, Sequence

import numpy as np

from .assignment import solve_assignment
from .errors import ValidationError
from .kalman import KalmanState, kalman_init, kalman_predict, kalman_update
from .mot_data import BBox, Detection, TrackRecord, group_by_frame, iou


class TrackStatus(enum.Enum):
    TENTATIVE = "tentative"
    ACTIVE = "active"
    LOST = "lost"


@dataclass
class TrackerConfig:
    """Association thresholds and track lifecycle knobs."""

    high_thresh: float = 0.6
    low_thresh: float = 0.1
    match_thresh_high: float = 0.8
    match_thresh_low: float = 0.5
    new_track_thresh: float = 0.7
    max_lost_frames: int = 30
    std_weight_position: float = 1.0 / 20.0
    std_weight_velocity: float = 1.0 / 160.0

    def __post_init__(self):
        if not 0.0 <= self.low_thresh < self.high_thresh <= 1.0:
            raise ValidationError(
                "need 0 <= low_thresh < high_thresh <= 1, got "
                f"low={self.low_thresh}, high={self.high_thresh}"
            )
        if not 0.0 <= self.new_track_thresh <= 1.0:
            raise ValidationError(
                f"new_track_thresh must lie in [0, 1], got {self.new_track_thresh}"
            )
        for name in ("match_thresh_high", "match_thresh_low"):
            value = getattr(self, name)
            if not 0.0 < value <= 1.0:
                raise ValidationError(f"{name} must lie in (0, 1], got {value}")
        if self.max_lost_frames < 1:
            raise ValidationError(
                f"max_lost_frames must be >= 1, got {self.max_lost_frames}"
            )

    @classmethod
    def from_dict(cls, data: dict) -> "TrackerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown tracker config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, stream: IO[str] | str) -> "TrackerConfig":
        text = stream if isinstance(stream, str) else stream.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid tracker config JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError("tracker config JSON must be an object")
        return cls.from_dict(data)


class Track:
    """Internal per-identity state."""

    __slots__ = ("track_id", "state", "status", "last_confidence", "frames_since_update", "age")

    def __init__(self, track_id: int, state: KalmanState, confidence: float):
        self.track_id = track_id
        self.state = state
        self.status = TrackStatus.TENTATIVE
        self.last_confidence = confidence
        self.frames_since_update = 0
        self.age = 1


class TrackerSession:
    """One tracker instance over one sequence. Frames must arrive in order."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self._tracks: list[Track] = []
        self._next_id = 1
        self._last_frame = 0

    @property
    def tracks(self) -> Sequence[Track]:
        return tuple(self._tracks)

    def step(self, frame: int, detections: Sequence[Detection]) -> list[TrackRecord]:
        """Advance one frame; returns the records emitted for that frame."""
        if frame <= self._last_frame:
            raise ValidationError(
                f"frame {frame} is not after last stepped frame {self._last_frame}"
            )
        for det in detections:
            if det.frame != frame:
                raise ValidationError(
                    f"detection frame {det.frame} does not match step frame {frame}"
                )
        self._last_frame = frame
        cfg = self.config

        for track in self._tracks:
            track.state = kalman_predict(
                track.state, cfg.std_weight_position, cfg.std_weight_velocity
            )
            track.age += 1

        high = [d for d in detections if d.confidence >= cfg.high_thresh]
        low = [
            d
            for d in detections
            if cfg.low_thresh <= d.confidence < cfg.high_thresh
        ]

        matched: list[tuple[Track, Detection]] = []

        pool = list(self._tracks)
        pairs, un_tracks, un_dets = self._associate(pool, high, cfg.match_thresh_high)
        matched.extend(pairs)

        # Second stage: low-confidence detections may continue tracks that
        # were seen recently; long-lost tracks are not eligible.
        second_pool = [
            pool[i] for i in un_tracks if pool[i].status is not TrackStatus.LOST
        ]
        pairs2, _, _ = self._associate(second_pool, low, cfg.match_thresh_low)
        matched.extend(pairs2)

        matched_tracks = {id(t) for t, _ in matched}
        emitted: list[TrackRecord] = []

        for track, det in matched:
            track.state = kalman_update(track.state, det.bbox, cfg.std_weight_position)
            track.status = TrackStatus.ACTIVE
            track.last_confidence = det.confidence
            track.frames_since_update = 0

        for track in self._tracks:
            if id(track) in matched_tracks:
                continue
            track.frames_since_update += 1
            track.status = TrackStatus.LOST

        self._tracks = [
            t for t in self._tracks if t.frames_since_update <= cfg.max_lost_frames
        ]

        for i in un_dets:
            det = high[i]
            if det.confidence >= cfg.new_track_thresh:
                track = Track(self._next_id, kalman_init(
                    det.bbox, cfg.std_weight_position, cfg.std_weight_velocity
                ), det.confidence)
                self._next_id += 1
                self._tracks.append(track)
                matched.append((track, det))

        for track, det in matched:
            box = track.state.bbox()
            if box.w <= 0 or box.h <= 0:
                continue
            emitted.append(
                TrackRecord(frame, track.track_id, box, det.confidence, 1, 1.0)
            )
        emitted.sort(key=lambda r: r.track_id)
        return emitted

    @staticmethod
    def _associate(
        tracks: list[Track], detections: list[Detection], match_thresh: float
    ) -> tuple[list[tuple[Track, Detection]], list[int], list[int]]:
        if not tracks or not detections:
            return [], list(range(len(tracks))), list(range(len(detections)))
        cost = np.ones((len(tracks), len(detections)), dtype=np.float64)
        for i, track in enumerate(tracks):
            box = track.state.bbox()
            for j, det in enumerate(detections):
                cost[i, j] = 1.0 - iou(box, det.bbox)
        matches, un_rows, un_cols = solve_assignment(cost, cost_limit=match_thresh)
        pairs = [(tracks[i], detections[j]) for i, j in matches]
        return pairs, un_rows, un_cols


def run_sequence(
    config: TrackerConfig | None,
    detections: Iterable[Detection],
    frame_count: int | None = None,
) -> list[TrackRecord]:
    """Track a whole sequence offline.

    Every frame from 1 to the end advances the session, including frames
    with no detections, so lost-track aging matches online behavior.
    frame_count extends the run past the last detection when given.
    """
    by_frame = group_by_frame(detections)
    last = max(by_frame) if by_frame else 0
    if frame_count is not None:
        if frame_count < last:
            raise ValidationError(
                f"frame_count {frame_count} is before last detection frame {last}"
            )
        last = frame_count
    session = TrackerSession(config)
    records: list[TrackRecord] = []
    for frame in range(1, last + 1):
        records.extend(session.step(frame, by_frame.get(frame, [])))
    return records
