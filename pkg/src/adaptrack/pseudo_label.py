"""Turn detector output into pseudo ground truth for self-training.

Detections below the confidence threshold are removed; the survivors
become GT-style records (flag 1, class 1, full visibility). Ids either
restart per frame or come from running the tracker over the stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import ValidationError
from .mot_data import Detection, TrackRecord, group_by_frame
from .tracker import TrackerConfig, run_sequence

DEFAULT_CONFIDENCE_THRESHOLD = 0.7


@dataclass(frozen=True)
class PseudoLabelConfig:
    confidence_threshold: float = DEFAULT_CONFIDENCE_THRESHOLD
    min_box_area: float = 0.0
    assign_ids: bool = False

    def __post_init__(self):
        if not 0.0 <= self.confidence_threshold <= 1.0:
            raise ValidationError(
                f"confidence_threshold must lie in [0, 1], got {self.confidence_threshold}"
            )
        if self.min_box_area < 0:
            raise ValidationError(
                f"min_box_area must be >= 0, got {self.min_box_area}"
            )


def filter_by_confidence(
    detections: Sequence[Detection], threshold: float
) -> list[Detection]:
    """Keep detections with confidence >= threshold (boundary survives)."""
    if not 0.0 <= threshold <= 1.0:
        raise ValidationError(f"threshold must lie in [0, 1], got {threshold}")
    return [d for d in detections if d.confidence >= threshold]


def generate_pseudo_labels(
    detections: Sequence[Detection],
    config: PseudoLabelConfig | None = None,
    tracker_config: TrackerConfig | None = None,
    frame_count: int | None = None,
) -> list[TrackRecord]:
    """Convert detections into pseudo-GT records.

    Without assign_ids, kept detections get per-frame sequential ids
    starting at 1 and their boxes pass through unchanged. With assign_ids,
    the tracker consumes the full detection stream (applying its own
    confidence split) and the smoothed output records are then filtered by
    the detection confidence they were emitted with.
    """
    config = config or PseudoLabelConfig()
    if config.assign_ids:
        tracked = run_sequence(tracker_config, detections, frame_count)
        kept_records = [
            r
            for r in tracked
            if r.confidence >= config.confidence_threshold
            and r.bbox.area >= config.min_box_area
        ]
        return [
            TrackRecord(r.frame, r.track_id, r.bbox, 1.0, 1, 1.0)
            for r in kept_records
        ]

    kept = [
        d
        for d in filter_by_confidence(detections, config.confidence_threshold)
        if d.bbox.area >= config.min_box_area
    ]
    records: list[TrackRecord] = []
    for frame, dets in group_by_frame(kept).items():
        for idx, det in enumerate(dets, start=1):
            records.append(TrackRecord(frame, idx, det.bbox, 1.0, 1, 1.0))
    return records
