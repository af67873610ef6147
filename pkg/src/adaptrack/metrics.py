"""CLEAR, IDF1, and HOTA evaluation for MOT-style annotations.

All three operate on TrackRecord lists (one for ground truth, one for
predictions). Multi-sequence aggregation pools the underlying counts and
recomputes ratios rather than averaging per-sequence scores.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .assignment import solve_assignment
from .errors import ValidationError
from .mot_data import BBox, TrackRecord, iou

# Localization thresholds for HOTA: 0.05, 0.10, ..., 0.95.
ALPHA_GRID: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 20))


@dataclass(frozen=True)
class FrameMatching:
    """Result of matching one frame's boxes."""

    frame: int
    pairs: tuple[tuple[int, int, float], ...]  # (gt_id, pred_id, iou)
    unmatched_gt: tuple[int, ...]
    unmatched_pred: tuple[int, ...]


@dataclass(frozen=True)
class ClearResult:
    mota: float
    fp: int
    fn: int
    idsw: int
    num_gt: int


@dataclass(frozen=True)
class AlphaScores:
    alpha: float
    hota: float
    deta: float
    assa: float
    tp: int
    fn: int
    fp: int
    ass_sum: float


@dataclass(frozen=True)
class HotaResult:
    hota: float
    deta: float
    assa: float
    per_alpha: tuple[AlphaScores, ...]


@dataclass(frozen=True)
class SequenceScores:
    name: str
    clear: ClearResult
    idf1: float
    hota: HotaResult
    idtp: int
    idfp: int
    idfn: int


@dataclass(frozen=True)
class MetricsReport:
    mota: float
    idf1: float
    hota: float
    deta: float
    assa: float
    fp: int
    fn: int
    idsw: int
    num_gt: int
    per_sequence: dict[str, SequenceScores] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "overall": {
                "mota": self.mota,
                "idf1": self.idf1,
                "hota": self.hota,
                "deta": self.deta,
                "assa": self.assa,
                "fp": self.fp,
                "fn": self.fn,
                "idsw": self.idsw,
                "num_gt": self.num_gt,
            },
            "sequences": {
                name: {
                    "mota": seq.clear.mota,
                    "idf1": seq.idf1,
                    "hota": seq.hota.hota,
                    "deta": seq.hota.deta,
                    "assa": seq.hota.assa,
                    "fp": seq.clear.fp,
                    "fn": seq.clear.fn,
                    "idsw": seq.clear.idsw,
                    "num_gt": seq.clear.num_gt,
                }
                for name, seq in self.per_sequence.items()
            },
        }


def _index_records(
    records: Iterable[TrackRecord], label: str
) -> dict[int, tuple[list[int], list[BBox]]]:
    """Group records by frame into parallel (ids, boxes) lists."""
    frames: dict[int, tuple[list[int], list[BBox]]] = {}
    seen: set[tuple[int, int]] = set()
    for rec in records:
        key = (rec.frame, rec.track_id)
        if key in seen:
            raise ValidationError(f"duplicate (frame, id) = {key} in {label}")
        seen.add(key)
        ids, boxes = frames.setdefault(rec.frame, ([], []))
        ids.append(rec.track_id)
        boxes.append(rec.bbox)
    return dict(sorted(frames.items()))


def _iou_matrix(gt_boxes: Sequence[BBox], pred_boxes: Sequence[BBox]) -> np.ndarray:
    mat = np.zeros((len(gt_boxes), len(pred_boxes)), dtype=np.float64)
    for i, g in enumerate(gt_boxes):
        for j, p in enumerate(pred_boxes):
            mat[i, j] = iou(g, p)
    return mat


def _match_scores(
    ious: np.ndarray, scores: np.ndarray, min_iou: float
) -> list[tuple[int, int]]:
    """Max-total-score matching over pairs whose IoU clears min_iou."""
    if ious.size == 0:
        return []
    cost = np.where(ious >= min_iou, -scores, 1.0)
    matches, _, _ = solve_assignment(cost, cost_limit=0.0)
    return matches


def match_frame(
    gt_boxes: Sequence[tuple[int, BBox]],
    pred_boxes: Sequence[tuple[int, BBox]],
    min_iou: float,
    frame: int = 0,
) -> FrameMatching:
    """Match one frame's GT boxes to predictions, maximizing total IoU.

    Only pairs with IoU >= min_iou are eligible. Inputs are (id, box)
    pairs; ids must be unique within each list.
    """
    if not 0.0 < min_iou <= 1.0:
        raise ValidationError(f"min_iou must lie in (0, 1], got {min_iou}")
    gt_ids = [i for i, _ in gt_boxes]
    pred_ids = [i for i, _ in pred_boxes]
    if len(set(gt_ids)) != len(gt_ids):
        raise ValidationError(f"duplicate gt ids in frame {frame}")
    if len(set(pred_ids)) != len(pred_ids):
        raise ValidationError(f"duplicate pred ids in frame {frame}")
    ious = _iou_matrix([b for _, b in gt_boxes], [b for _, b in pred_boxes])
    matches = _match_scores(ious, ious, min_iou)
    pairs = tuple(
        (gt_ids[i], pred_ids[j], float(ious[i, j])) for i, j in matches
    )
    matched_g = {i for i, _ in matches}
    matched_p = {j for _, j in matches}
    return FrameMatching(
        frame=frame,
        pairs=pairs,
        unmatched_gt=tuple(g for k, g in enumerate(gt_ids) if k not in matched_g),
        unmatched_pred=tuple(p for k, p in enumerate(pred_ids) if k not in matched_p),
    )


def clear_mot(
    gt_records: Sequence[TrackRecord],
    pred_records: Sequence[TrackRecord],
    min_iou: float = 0.5,
) -> ClearResult:
    """CLEAR metrics: MOTA = 1 - (FP + FN + IDSW) / num_gt.

    Matches from the previous frame are kept while both boxes persist and
    still overlap (the continuity rule); identity switches are counted
    against a ground-truth id's last matched prediction, across gaps.
    """
    num_gt = len(gt_records)
    if num_gt == 0:
        raise ValidationError("empty ground truth")
    gt_frames = _index_records(gt_records, "ground truth")
    pred_frames = _index_records(pred_records, "predictions")

    fp = fn = idsw = 0
    last_match: dict[int, int] = {}
    prev_pairs: dict[int, int] = {}

    for frame in sorted(set(gt_frames) | set(pred_frames)):
        gt_ids, gt_boxes = gt_frames.get(frame, ([], []))
        pred_ids, pred_boxes = pred_frames.get(frame, ([], []))
        gt_by_id = dict(zip(gt_ids, gt_boxes))
        pred_by_id = dict(zip(pred_ids, pred_boxes))

        pairs: list[tuple[int, int]] = []
        for g_id, p_id in prev_pairs.items():
            if (
                g_id in gt_by_id
                and p_id in pred_by_id
                and iou(gt_by_id[g_id], pred_by_id[p_id]) >= min_iou
            ):
                pairs.append((g_id, p_id))
        held_g = {g for g, _ in pairs}
        held_p = {p for _, p in pairs}

        rest_gt = [(g, gt_by_id[g]) for g in gt_ids if g not in held_g]
        rest_pred = [(p, pred_by_id[p]) for p in pred_ids if p not in held_p]
        fresh = match_frame(rest_gt, rest_pred, min_iou, frame)
        pairs.extend((g, p) for g, p, _ in fresh.pairs)

        fn += len(gt_ids) - len(pairs)
        fp += len(pred_ids) - len(pairs)
        for g_id, p_id in pairs:
            if g_id in last_match and last_match[g_id] != p_id:
                idsw += 1
            last_match[g_id] = p_id
        prev_pairs = dict(pairs)

    mota = 1.0 - (fp + fn + idsw) / num_gt
    return ClearResult(mota, fp, fn, idsw, num_gt)


def _id_counts(
    gt_frames: dict[int, tuple[list[int], list[BBox]]],
    pred_frames: dict[int, tuple[list[int], list[BBox]]],
    min_iou: float,
) -> tuple[int, int, int]:
    """Global identity counts (IDTP, IDFP, IDFN) behind IDF1."""
    t_gt: Counter = Counter()
    t_pred: Counter = Counter()
    overlap: Counter = Counter()
    for frame, (gt_ids, gt_boxes) in gt_frames.items():
        t_gt.update(gt_ids)
        pred_ids, pred_boxes = pred_frames.get(frame, ([], []))
        for i, g in enumerate(gt_boxes):
            for j, p in enumerate(pred_boxes):
                if iou(g, p) >= min_iou:
                    overlap[(gt_ids[i], pred_ids[j])] += 1
    for pred_ids, _ in pred_frames.values():
        t_pred.update(pred_ids)

    total_gt = sum(t_gt.values())
    total_pred = sum(t_pred.values())
    if not t_pred:
        return 0, 0, total_gt

    g_list = sorted(t_gt)
    p_list = sorted(t_pred)
    ng, np_ = len(g_list), len(p_list)
    # Square id-matching problem with dummy partners: leaving an id
    # unmatched costs its full frame count. The big sentinel forbids the
    # off-diagonal dummy cells (the solver rejects actual infinities).
    big = float(total_gt + total_pred + 1)
    cost = np.full((ng + np_, np_ + ng), big, dtype=np.float64)
    for i, g in enumerate(g_list):
        for j, p in enumerate(p_list):
            ov = overlap.get((g, p), 0)
            cost[i, j] = (t_gt[g] - ov) + (t_pred[p] - ov)
        cost[i, np_ + i] = t_gt[g]
    for j, p in enumerate(p_list):
        cost[ng + j, j] = t_pred[p]
    cost[ng:, np_:] = 0.0

    matches, _, _ = solve_assignment(cost)
    idtp = 0
    for r, c in matches:
        if r < ng and c < np_:
            idtp += overlap.get((g_list[r], p_list[c]), 0)
    return idtp, total_pred - idtp, total_gt - idtp


def idf1(
    gt_records: Sequence[TrackRecord],
    pred_records: Sequence[TrackRecord],
    min_iou: float = 0.5,
) -> float:
    """Identity-F1: harmonic mean of id precision and recall."""
    if not gt_records:
        raise ValidationError("empty ground truth")
    gt_frames = _index_records(gt_records, "ground truth")
    pred_frames = _index_records(pred_records, "predictions")
    idtp, idfp, idfn = _id_counts(gt_frames, pred_frames, min_iou)
    return 2.0 * idtp / (2.0 * idtp + idfp + idfn)


def _hota_counts(
    gt_frames: dict[int, tuple[list[int], list[BBox]]],
    pred_frames: dict[int, tuple[list[int], list[BBox]]],
) -> list[tuple[int, int, int, float]]:
    """Per-alpha (tp, fn, fp, ass_sum) counts for the 19-point grid."""
    frames = sorted(set(gt_frames) | set(pred_frames))
    t_gt: Counter = Counter()
    t_pred: Counter = Counter()
    cached = []
    for frame in frames:
        gt_ids, gt_boxes = gt_frames.get(frame, ([], []))
        pred_ids, pred_boxes = pred_frames.get(frame, ([], []))
        t_gt.update(gt_ids)
        t_pred.update(pred_ids)
        cached.append((gt_ids, pred_ids, _iou_matrix(gt_boxes, pred_boxes)))

    out = []
    for alpha in ALPHA_GRID:
        # First pass: potential-match counts feed an association bonus so
        # the per-frame matching prefers pairs that co-occur a lot.
        co: Counter = Counter()
        for gt_ids, pred_ids, ious in cached:
            if ious.size == 0:
                continue
            for i, j in zip(*np.nonzero(ious >= alpha)):
                co[(gt_ids[i], pred_ids[j])] += 1

        tp = fn = fp = 0
        matched: Counter = Counter()
        for gt_ids, pred_ids, ious in cached:
            if ious.size == 0:
                matches: list[tuple[int, int]] = []
            else:
                bonus = np.zeros_like(ious)
                for i, g in enumerate(gt_ids):
                    for j, p in enumerate(pred_ids):
                        c = co.get((g, p), 0)
                        if c:
                            bonus[i, j] = c / (t_gt[g] + t_pred[p] - c)
                matches = _match_scores(ious, ious + bonus, alpha)
            tp += len(matches)
            fn += len(gt_ids) - len(matches)
            fp += len(pred_ids) - len(matches)
            for i, j in matches:
                matched[(gt_ids[i], pred_ids[j])] += 1

        ass_sum = sum(
            m * (m / (t_gt[g] + t_pred[p] - m)) for (g, p), m in matched.items()
        )
        out.append((tp, fn, fp, ass_sum))
    return out


def _hota_from_counts(counts: list[tuple[int, int, int, float]]) -> HotaResult:
    per_alpha = []
    for alpha, (tp, fn, fp, ass_sum) in zip(ALPHA_GRID, counts):
        denom = tp + fn + fp
        deta = tp / denom if denom else 0.0
        assa = ass_sum / tp if tp else 0.0
        per_alpha.append(
            AlphaScores(alpha, math.sqrt(deta * assa), deta, assa, tp, fn, fp, ass_sum)
        )
    n = len(per_alpha)
    return HotaResult(
        hota=sum(a.hota for a in per_alpha) / n,
        deta=sum(a.deta for a in per_alpha) / n,
        assa=sum(a.assa for a in per_alpha) / n,
        per_alpha=tuple(per_alpha),
    )


def hota(
    gt_records: Sequence[TrackRecord],
    pred_records: Sequence[TrackRecord],
) -> HotaResult:
    """HOTA with DetA/AssA, averaged over the 19-point alpha grid."""
    if not gt_records:
        raise ValidationError("empty ground truth")
    gt_frames = _index_records(gt_records, "ground truth")
    pred_frames = _index_records(pred_records, "predictions")
    return _hota_from_counts(_hota_counts(gt_frames, pred_frames))


def evaluate(
    sequences: Sequence[tuple[str, Sequence[TrackRecord], Sequence[TrackRecord]]],
    min_iou: float = 0.5,
) -> MetricsReport:
    """Score (name, gt, predictions) triples and pool counts across them."""
    if not sequences:
        raise ValidationError("no sequences to evaluate")
    per_sequence: dict[str, SequenceScores] = {}
    fp = fn = idsw = num_gt = 0
    idtp = idfp = idfn = 0
    pooled = [[0, 0, 0, 0.0] for _ in ALPHA_GRID]

    for name, gt_records, pred_records in sequences:
        if name in per_sequence:
            raise ValidationError(f"duplicate sequence name {name!r}")
        try:
            clear = clear_mot(gt_records, pred_records, min_iou)
            gt_frames = _index_records(gt_records, "ground truth")
            pred_frames = _index_records(pred_records, "predictions")
            s_idtp, s_idfp, s_idfn = _id_counts(gt_frames, pred_frames, min_iou)
            counts = _hota_counts(gt_frames, pred_frames)
        except ValidationError as exc:
            raise ValidationError(f"sequence {name!r}: {exc}") from None
        seq_hota = _hota_from_counts(counts)
        seq_idf1 = 2.0 * s_idtp / (2.0 * s_idtp + s_idfp + s_idfn)
        per_sequence[name] = SequenceScores(
            name, clear, seq_idf1, seq_hota, s_idtp, s_idfp, s_idfn
        )
        fp += clear.fp
        fn += clear.fn
        idsw += clear.idsw
        num_gt += clear.num_gt
        idtp += s_idtp
        idfp += s_idfp
        idfn += s_idfn
        for k, (tp_a, fn_a, fp_a, ass_a) in enumerate(counts):
            pooled[k][0] += tp_a
            pooled[k][1] += fn_a
            pooled[k][2] += fp_a
            pooled[k][3] += ass_a

    overall_hota = _hota_from_counts([tuple(row) for row in pooled])
    return MetricsReport(
        mota=1.0 - (fp + fn + idsw) / num_gt,
        idf1=2.0 * idtp / (2.0 * idtp + idfp + idfn),
        hota=overall_hota.hota,
        deta=overall_hota.deta,
        assa=overall_hota.assa,
        fp=fp,
        fn=fn,
        idsw=idsw,
        num_gt=num_gt,
        per_sequence=per_sequence,
    )
