"""Tracker lifecycle, two-stage association, and batch-driver tests."""

import io
import json

import pytest

from adaptrack.errors import ValidationError
from adaptrack.mot_data import BBox, Detection
from adaptrack.tracker import TrackerConfig, TrackerSession, TrackStatus, run_sequence


def box(x, y=None, w=40.0, h=80.0):
    return BBox(x, x if y is None else y, w, h)


def det(frame, bbox, conf=0.9):
    return Detection(frame, bbox, conf)


class TestConfig:
    def test_defaults(self):
        cfg = TrackerConfig()
        assert cfg.high_thresh == 0.6
        assert cfg.low_thresh == 0.1
        assert cfg.match_thresh_high == 0.8
        assert cfg.match_thresh_low == 0.5
        assert cfg.new_track_thresh == 0.7
        assert cfg.max_lost_frames == 30

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"low_thresh": 0.6, "high_thresh": 0.6},
            {"low_thresh": -0.1},
            {"high_thresh": 1.5},
            {"new_track_thresh": 1.2},
            {"match_thresh_high": 0.0},
            {"match_thresh_low": 1.3},
            {"max_lost_frames": 0},
        ],
    )
    def test_rejects_bad_values(self, kwargs):
        with pytest.raises(ValidationError):
            TrackerConfig(**kwargs)

    def test_from_dict_rejects_unknown_keys(self):
        with pytest.raises(ValidationError, match="min_hits"):
            TrackerConfig.from_dict({"min_hits": 3})

    def test_from_json(self):
        cfg = TrackerConfig.from_json(io.StringIO(json.dumps({"high_thresh": 0.5})))
        assert cfg.high_thresh == 0.5
        assert cfg.low_thresh == 0.1

    def test_from_json_rejects_non_object(self):
        with pytest.raises(ValidationError):
            TrackerConfig.from_json("[1, 2]")
        with pytest.raises(ValidationError):
            TrackerConfig.from_json("{not json")


class TestStep:
    def test_two_confident_detections_spawn_two_tracks(self):
        session = TrackerSession()
        out = session.step(1, [det(1, box(0)), det(1, box(500), conf=0.9)])
        assert len(out) == 2
        assert sorted(r.track_id for r in out) == [1, 2]
        assert all(t.status is TrackStatus.TENTATIVE for t in session.tracks)

    def test_low_confidence_detection_continues_active_track_in_stage_two(self):
        session = TrackerSession()
        session.step(1, [det(1, box(100))])
        session.step(2, [det(2, box(100))])
        out = session.step(3, [det(3, box(100), conf=0.3)])
        assert [r.track_id for r in out] == [1]
        assert out[0].confidence == 0.3
        assert session.tracks[0].status is TrackStatus.ACTIVE

    def test_low_confidence_detection_does_not_spawn(self):
        session = TrackerSession()
        assert session.step(1, [det(1, box(100), conf=0.3)]) == []
        assert session.tracks == ()

    def test_mid_confidence_detection_does_not_spawn(self):
        # High enough for stage 1, below the birth threshold.
        session = TrackerSession()
        assert session.step(1, [det(1, box(100), conf=0.65)]) == []
        assert session.tracks == ()

    def test_track_dropped_after_max_lost_frames(self):
        cfg = TrackerConfig(max_lost_frames=3)
        session = TrackerSession(cfg)
        session.step(1, [det(1, box(100))])
        for frame in range(2, 6):
            assert session.step(frame, []) == []
        assert session.tracks == ()

    def test_track_survives_gap_within_window_same_id(self):
        cfg = TrackerConfig(max_lost_frames=3)
        session = TrackerSession(cfg)
        session.step(1, [det(1, box(100))])
        for frame in (2, 3):
            session.step(frame, [])
            assert session.tracks[0].status is TrackStatus.LOST
            assert session.tracks[0].frames_since_update >= 1
        out = session.step(4, [det(4, box(100))])
        assert [r.track_id for r in out] == [1]

    def test_reappearance_after_drop_gets_fresh_id(self):
        cfg = TrackerConfig(max_lost_frames=2)
        session = TrackerSession(cfg)
        session.step(1, [det(1, box(100))])
        for frame in (2, 3, 4):
            session.step(frame, [])
        out = session.step(5, [det(5, box(100))])
        assert [r.track_id for r in out] == [2]

    def test_ids_never_reused_and_strictly_increase(self):
        cfg = TrackerConfig(max_lost_frames=1)
        session = TrackerSession(cfg)
        seen = []
        for frame in range(1, 20, 3):
            out = session.step(frame, [det(frame, box(100))])
            session.step(frame + 1, [])
            session.step(frame + 2, [])
            seen.extend(r.track_id for r in out)
        assert seen == sorted(set(seen))
        assert len(seen) == len(set(seen))

    def test_out_of_order_frame_rejected(self):
        session = TrackerSession()
        session.step(3, [])
        with pytest.raises(ValidationError, match="not after"):
            session.step(3, [])
        with pytest.raises(ValidationError, match="not after"):
            session.step(2, [])

    def test_detection_frame_mismatch_rejected(self):
        session = TrackerSession()
        with pytest.raises(ValidationError, match="does not match"):
            session.step(1, [det(2, box(100))])

    def test_lost_track_recoverable_by_high_but_not_low_confidence(self):
        cfg = TrackerConfig(max_lost_frames=10)
        session = TrackerSession(cfg)
        session.step(1, [det(1, box(100))])
        session.step(2, [])
        assert session.tracks[0].status is TrackStatus.LOST
        # Stage 2 skips lost tracks, so a low-confidence hit cannot recover it.
        assert session.step(3, [det(3, box(100), conf=0.3)]) == []
        out = session.step(4, [det(4, box(100), conf=0.9)])
        assert [r.track_id for r in out] == [1]

    def test_two_objects_keep_identities_when_both_drop_confidence(self):
        session = TrackerSession()
        a, b = box(0), box(500)
        session.step(1, [det(1, a), det(1, b, conf=0.9)])
        out = session.step(2, [det(2, a, conf=0.2), det(2, b, conf=0.2)])
        by_id = {r.track_id: r.bbox for r in out}
        assert set(by_id) == {1, 2}
        assert abs(by_id[1].x - a.x) < abs(by_id[1].x - b.x)
        assert abs(by_id[2].x - b.x) < abs(by_id[2].x - a.x)

    def test_records_sorted_by_track_id(self):
        session = TrackerSession()
        dets = [det(1, box(100 * i), conf=0.9) for i in range(5)]
        out = session.step(1, list(reversed(dets)))
        ids = [r.track_id for r in out]
        assert ids == sorted(ids)

    def test_record_fields(self):
        session = TrackerSession()
        out = session.step(1, [det(1, box(100), conf=0.83)])
        rec = out[0]
        assert rec.frame == 1
        assert rec.confidence == 0.83
        assert rec.class_id == 1
        assert rec.visibility == 1.0

    def test_deterministic(self):
        def run():
            session = TrackerSession()
            records = []
            for frame in range(1, 30):
                x = 10.0 * frame
                dets = [
                    det(frame, box(x), conf=0.9),
                    det(frame, box(x + 400), conf=0.4),
                ]
                records.extend(session.step(frame, dets))
            return records

        assert run() == run()


class TestRunSequence:
    def test_gap_frames_are_stepped(self):
        # A detection gap longer than max_lost_frames must drop the track
        # even though no detections exist for the in-between frames.
        cfg = TrackerConfig(max_lost_frames=3)
        dets = [det(1, box(100)), det(10, box(100))]
        records = run_sequence(cfg, dets)
        assert sorted({r.track_id for r in records}) == [1, 2]

    def test_frame_count_before_last_detection_rejected(self):
        with pytest.raises(ValidationError, match="frame_count"):
            run_sequence(None, [det(5, box(100))], frame_count=4)

    def test_frame_count_extends_run(self):
        records = run_sequence(None, [det(1, box(100))], frame_count=50)
        assert [r.frame for r in records] == [1]

    def test_empty_input(self):
        assert run_sequence(None, []) == []

    def test_hundred_frames_five_objects_perfect_detections(self):
        boxes = [box(200.0 * i, 100.0) for i in range(5)]
        dets = [
            det(frame, BBox(b.x + frame, b.y, b.w, b.h))
            for frame in range(1, 101)
            for b in boxes
        ]
        records = run_sequence(None, dets)
        assert len(records) == 500
        spans = {}
        for rec in records:
            spans.setdefault(rec.track_id, []).append(rec.frame)
        assert len(spans) == 5
        for frames in spans.values():
            assert frames == list(range(1, 101))


class TestTrackInvariants:
    def test_lost_implies_missed_at_least_once(self):
        session = TrackerSession()
        session.step(1, [det(1, box(100))])
        session.step(2, [])
        for track in session.tracks:
            if track.status is TrackStatus.LOST:
                assert track.frames_since_update >= 1

    def test_age_counts_frames_since_birth(self):
        session = TrackerSession()
        session.step(1, [det(1, box(100))])
        assert session.tracks[0].age == 1
        session.step(2, [det(2, box(100))])
        assert session.tracks[0].age == 2
        session.step(3, [])
        assert session.tracks[0].age == 3
