"""Confidence filtering and pseudo ground-truth generation tests."""

import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adaptrack.errors import ValidationError
from adaptrack.mot_data import parse_ground_truth, write_annotations
from adaptrack.pseudo_label import (
    PseudoLabelConfig,
    filter_by_confidence,
    generate_pseudo_labels,
)

from conftest import det


class TestConfig:
    def test_defaults(self):
        cfg = PseudoLabelConfig()
        assert cfg.confidence_threshold == 0.7
        assert cfg.min_box_area == 0.0
        assert cfg.assign_ids is False

    def test_threshold_bounds(self):
        with pytest.raises(ValidationError):
            PseudoLabelConfig(confidence_threshold=1.5)
        with pytest.raises(ValidationError):
            PseudoLabelConfig(confidence_threshold=-0.1)

    def test_min_area_bounds(self):
        with pytest.raises(ValidationError):
            PseudoLabelConfig(min_box_area=-1.0)


class TestFilterByConfidence:
    def test_boundary_is_kept(self):
        dets = [
            det(1, 0, 0, 10, 10, conf=0.9),
            det(1, 20, 0, 10, 10, conf=0.69),
            det(1, 40, 0, 10, 10, conf=0.7),
        ]
        kept = filter_by_confidence(dets, 0.7)
        assert [d.confidence for d in kept] == [0.9, 0.7]

    def test_threshold_zero_is_identity(self):
        dets = [det(1, 0, 0, 10, 10, conf=c) for c in (0.0, 0.3, 1.0)]
        assert filter_by_confidence(dets, 0.0) == dets

    def test_threshold_one_keeps_only_certainties(self):
        dets = [det(1, 0, 0, 10, 10, conf=c) for c in (0.999, 1.0)]
        assert [d.confidence for d in filter_by_confidence(dets, 1.0)] == [1.0]

    def test_order_preserved(self):
        dets = [det(1, 10.0 * i, 0, 10, 10, conf=0.8) for i in range(5)]
        assert filter_by_confidence(dets, 0.5) == dets

    def test_threshold_validated(self):
        with pytest.raises(ValidationError):
            filter_by_confidence([], 2.0)

    @given(
        confs=st.lists(st.floats(min_value=0.0, max_value=1.0), max_size=50),
        t1=st.floats(min_value=0.0, max_value=1.0),
        t2=st.floats(min_value=0.0, max_value=1.0),
    )
    @settings(max_examples=200, deadline=None)
    def test_monotone_in_threshold(self, confs, t1, t2):
        lo, hi = sorted((t1, t2))
        dets = [det(1, 10.0 * i, 0, 10, 10, conf=c) for i, c in enumerate(confs)]
        at_hi = filter_by_confidence(dets, hi)
        at_lo = filter_by_confidence(dets, lo)
        assert set(at_hi) <= set(at_lo)

    def test_idempotent(self):
        dets = [det(1, 10.0 * i, 0, 10, 10, conf=0.1 * i) for i in range(10)]
        once = filter_by_confidence(dets, 0.6)
        assert filter_by_confidence(once, 0.6) == once


class TestGeneratePseudoLabels:
    def test_sequential_ids_per_frame(self):
        dets = [
            det(1, 0, 0, 10, 10, conf=0.9),
            det(1, 20, 0, 10, 10, conf=0.8),
            det(1, 40, 0, 10, 10, conf=0.75),
            det(2, 0, 0, 10, 10, conf=0.9),
        ]
        records = generate_pseudo_labels(dets)
        frame1 = [r for r in records if r.frame == 1]
        frame2 = [r for r in records if r.frame == 2]
        assert [r.track_id for r in frame1] == [1, 2, 3]
        assert [r.track_id for r in frame2] == [1]

    def test_record_fields_are_gt_style(self):
        records = generate_pseudo_labels([det(1, 5, 6, 10, 10, conf=0.8)])
        r = records[0]
        assert r.confidence == 1.0
        assert r.class_id == 1
        assert r.visibility == 1.0
        assert (r.bbox.x, r.bbox.y) == (5, 6)

    def test_all_below_threshold_gives_empty(self):
        dets = [det(1, 0, 0, 10, 10, conf=0.3)]
        assert generate_pseudo_labels(dets) == []

    def test_min_box_area_drops_small_boxes(self):
        dets = [
            det(1, 0, 0, 10, 10, conf=0.9),  # area 100
            det(1, 50, 0, 5, 5, conf=0.9),  # area 25
        ]
        cfg = PseudoLabelConfig(min_box_area=50.0)
        records = generate_pseudo_labels(dets, cfg)
        assert len(records) == 1
        assert records[0].bbox.w == 10

    def test_output_reparses_as_ground_truth(self):
        dets = [
            det(1, 0, 0, 10, 10, conf=0.9),
            det(1, 20, 0, 12, 14, conf=0.7),
            det(3, 5, 5, 8, 8, conf=0.95),
        ]
        records = generate_pseudo_labels(dets)
        buf = io.StringIO()
        write_annotations(records, buf)
        buf.seek(0)
        parsed = parse_ground_truth(buf)
        assert list(parsed) == sorted(records, key=lambda r: (r.frame, r.track_id))

    def test_threshold_monotone_as_record_sets(self):
        dets = [det(1, 3.0 * i, 0, 10, 10, conf=0.1 * i) for i in range(1, 10)]
        strict = generate_pseudo_labels(
            dets, PseudoLabelConfig(confidence_threshold=0.8)
        )
        loose = generate_pseudo_labels(
            dets, PseudoLabelConfig(confidence_threshold=0.7)
        )
        # Sequential ids differ between runs, so compare by box only.
        strict_boxes = {(r.frame, r.bbox) for r in strict}
        loose_boxes = {(r.frame, r.bbox) for r in loose}
        assert strict_boxes <= loose_boxes

    def test_tracker_path_assigns_persistent_ids(self):
        dets = [det(f, 100, 100, 40, 80, conf=0.9) for f in range(1, 6)]
        cfg = PseudoLabelConfig(assign_ids=True)
        records = generate_pseudo_labels(dets, cfg)
        assert len(records) == 5
        assert {r.track_id for r in records} == {1}
        assert all(r.confidence == 1.0 for r in records)

    def test_tracker_path_filters_on_detection_confidence(self):
        # Alternating confident / weak detections: the tracker keeps identity
        # through the weak frames, but only confident frames survive the cut.
        dets = [
            det(f, 100, 100, 40, 80, conf=0.9 if f % 2 else 0.3)
            for f in range(1, 7)
        ]
        cfg = PseudoLabelConfig(assign_ids=True)
        records = generate_pseudo_labels(dets, cfg)
        assert [r.frame for r in records] == [1, 3, 5]
        assert {r.track_id for r in records} == {1}

    def test_empty_input(self):
        assert generate_pseudo_labels([]) == []
