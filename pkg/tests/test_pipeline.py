"""Round orchestration, resume, and lineage tests with stub external commands."""

import json

import numpy as np
import pytest

from adaptrack.errors import ExternalCommandError, ValidationError
from adaptrack.mot_data import parse_detections, parse_ground_truth
from adaptrack.pipeline import (
    PipelineConfig,
    load_manifest,
    pipeline_status,
    resume_round,
    round_dir_for,
    run_pipeline,
    run_round,
)
from adaptrack.pseudo_label import generate_pseudo_labels
from adaptrack.soup import read_archive_file

from conftest import (
    TRAIN_FAIL_ON_SENTINEL_STUB,
    TRAIN_IDENTITY_STUB,
    make_pipeline_env,
    write_stub,
)


class TestConfig:
    def test_required_fields(self):
        with pytest.raises(ValidationError, match="source_dataset"):
            PipelineConfig("", "t", "c", "i", "tr", "e")

    def test_rounds_bound(self):
        with pytest.raises(ValidationError, match="rounds"):
            PipelineConfig("s", "t", "c", "i", "tr", "e", rounds=0)

    def test_threshold_validated(self):
        with pytest.raises(ValidationError, match="confidence_threshold"):
            PipelineConfig("s", "t", "c", "i", "tr", "e", confidence_threshold=1.5)

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError, match="learning_rate"):
            PipelineConfig.from_dict({"learning_rate": 0.1})

    def test_dict_round_trip(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path, rounds=2, greedy_strict=True)
        clone = PipelineConfig.from_dict(json.loads(json.dumps(config.to_dict())))
        assert clone == config

    def test_from_json_rejects_garbage(self):
        with pytest.raises(ValidationError, match="JSON"):
            PipelineConfig.from_json("{nope")


class TestSingleRound:
    def test_identity_trainer_keeps_checkpoint(self, tmp_path):
        config, paths = make_pipeline_env(tmp_path)
        config.train_cmd = write_stub(
            paths["stubs"] / "train_id.py", TRAIN_IDENTITY_STUB
        )
        workdir = tmp_path / "work"
        (manifest,) = run_pipeline(config, workdir)

        assert manifest["status"] == "completed"
        assert all(s["status"] == "completed" for s in manifest["stages"].values())
        round_dir = round_dir_for(workdir, 1)
        soup_log = json.loads((round_dir / "soup_log.json").read_text())
        # The copied candidate dedups against the input checkpoint, so the
        # soup sees exactly one ingredient.
        assert len(soup_log["ingredients"]) == 1
        assert soup_log["ingredients"][0]["accepted"] is True

        out = read_archive_file(round_dir / "checkpoint_out.tarc")
        base = read_archive_file(paths["ckpt0"])
        np.testing.assert_array_equal(out.tensor("w"), base.tensor("w"))
        assert out.metadata["round"] == "1"
        assert out.metadata["soup"] == "greedy"

    def test_pseudo_stage_matches_reference_filter(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path)
        workdir = tmp_path / "work"
        run_pipeline(config, workdir)
        round_dir = round_dir_for(workdir, 1)

        with open(round_dir / "det" / "tgt01.txt") as fh:
            detections = list(parse_detections(fh))
        expected = generate_pseudo_labels(detections)
        with open(round_dir / "pseudo" / "tgt01.txt") as fh:
            written = list(parse_ground_truth(fh))
        assert written == sorted(expected, key=lambda r: (r.frame, r.track_id))
        # Stub confidences are 0.9/0.5/0.85/0.95/0.65; 0.7 keeps three.
        assert len(written) == 3
        assert all(r.confidence == 1.0 for r in written)

    def test_soup_prefers_improving_candidate(self, tmp_path):
        # Trainer emits base+0.5 and base+2.0; the evaluator targets mean
        # 1.0, so from a zero warm-up the +0.5 candidate wins the pot and
        # +2.0 joins it (mean 1.25 beats 0.5 alone).
        config, _ = make_pipeline_env(tmp_path)
        workdir = tmp_path / "work"
        (manifest,) = run_pipeline(config, workdir)
        out = read_archive_file(
            round_dir_for(workdir, 1) / "checkpoint_out.tarc"
        )
        np.testing.assert_allclose(out.tensor("w"), [1.25] * 4)
        log = json.loads(
            (round_dir_for(workdir, 1) / "soup_log.json").read_text()
        )
        accepted = [e["score"] for e in log["ingredients"] if e["accepted"]]
        assert accepted == sorted(accepted)

    def test_manifest_records_stage_artifacts(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path)
        workdir = tmp_path / "work"
        (manifest,) = run_pipeline(config, workdir)
        stages = manifest["stages"]
        assert stages["infer"]["artifacts"] == ["det/tgt01.txt"]
        assert stages["pseudo"]["artifacts"] == ["pseudo/tgt01.txt"]
        assert "mosaic/manifest.json" in stages["mosaic"]["artifacts"]
        assert stages["train"]["artifacts"] == [
            "candidates/cand_00.tarc",
            "candidates/cand_01.tarc",
        ]
        assert "checkpoint_out.tarc" in stages["soup"]["artifacts"]
        assert manifest["mix"] == [2, 2]
        assert manifest["mosaic_seed"] == config.seed ^ 1
        assert manifest["checkpoint_in"]["sha256"]
        assert manifest["created"] <= manifest["updated"]

    def test_round_index_must_be_positive(self, tmp_path):
        config, paths = make_pipeline_env(tmp_path)
        with pytest.raises(ValidationError, match="round index"):
            run_round(tmp_path / "work", config, 0, paths["ckpt0"])

    def test_missing_checkpoint_rejected(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path)
        with pytest.raises(ValidationError, match="not found"):
            run_round(tmp_path / "work", config, 1, tmp_path / "ghost.tarc")

    def test_checkpoint_hash_mismatch_rejected(self, tmp_path):
        config, paths = make_pipeline_env(tmp_path)
        with pytest.raises(ValidationError, match="does not match"):
            run_round(
                tmp_path / "work", config, 1, paths["ckpt0"],
                expected_checkpoint_hash="0" * 64,
            )


class TestMultiRound:
    def test_three_rounds_chain_checkpoints(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path, rounds=3)
        workdir = tmp_path / "work"
        manifests = run_pipeline(config, workdir)
        assert [m["round"] for m in manifests] == [1, 2, 3]
        assert all(m["status"] == "completed" for m in manifests)
        for prev, cur in zip(manifests, manifests[1:]):
            assert cur["checkpoint_in"]["path"] == prev["checkpoint_out"]["path"]
            assert cur["checkpoint_in"]["sha256"] == prev["checkpoint_out"]["sha256"]

    def test_later_rounds_drop_source_tiles(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path, rounds=2)
        workdir = tmp_path / "work"
        first, second = run_pipeline(config, workdir)
        assert first["mix"] == [2, 2]
        assert second["mix"] == [0, 4]
        mosaic = json.loads(
            (round_dir_for(workdir, 2) / "mosaic" / "manifest.json").read_text()
        )
        domains = [t["domain"] for item in mosaic for t in item["tiles"]]
        assert set(domains) == {"target"}

    def test_include_source_keeps_mix(self, tmp_path):
        config, _ = make_pipeline_env(
            tmp_path, rounds=2, include_source_in_finetune=True
        )
        manifests = run_pipeline(config, tmp_path / "work")
        assert manifests[1]["mix"] == [2, 2]

    def test_mosaic_seed_varies_per_round(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path, rounds=2)
        manifests = run_pipeline(config, tmp_path / "work")
        assert manifests[0]["mosaic_seed"] == config.seed ^ 1
        assert manifests[1]["mosaic_seed"] == config.seed ^ 2


class TestResume:
    def test_fresh_workdir_resumes_at_zero(self, tmp_path):
        assert resume_round(tmp_path) == 0

    def test_after_n_completed_resumes_at_n_plus_one(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path, rounds=2)
        workdir = tmp_path / "work"
        run_pipeline(config, workdir)
        assert resume_round(workdir) == 3

    def test_failed_round_is_resumed(self, tmp_path):
        config, paths = make_pipeline_env(tmp_path)
        config.train_cmd = write_stub(
            paths["stubs"] / "train_flaky.py", TRAIN_FAIL_ON_SENTINEL_STUB
        )
        workdir = tmp_path / "work"
        (workdir / "rounds").mkdir(parents=True)
        (workdir / "FAIL").touch()

        with pytest.raises(ExternalCommandError, match="train"):
            run_pipeline(config, workdir)

        manifest = load_manifest(round_dir_for(workdir, 1))
        assert manifest["status"] == "failed"
        assert manifest["failed_stage"] == "train"
        assert "exploded" in manifest["error"]
        assert manifest["stages"]["mosaic"]["status"] == "completed"
        assert resume_round(workdir) == 1
        # Artifacts from the completed stages survive the failure.
        assert (round_dir_for(workdir, 1) / "pseudo" / "tgt01.txt").is_file()

        calls_before = paths["infer_calls"].read_text().count("tgt01")
        (workdir / "FAIL").unlink()
        (manifest,) = run_pipeline(config, workdir)
        assert manifest["status"] == "completed"
        # Completed stages were skipped on resume: no new inference calls.
        assert paths["infer_calls"].read_text().count("tgt01") == calls_before

    def test_corrupt_manifest_error_names_path(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path)
        workdir = tmp_path / "work"
        round_dir = round_dir_for(workdir, 1)
        round_dir.mkdir(parents=True)
        (round_dir / "manifest.json").write_text("{broken")
        with pytest.raises(ValidationError, match="manifest.json"):
            resume_round(workdir)

    def test_non_round_manifest_rejected(self, tmp_path):
        round_dir = round_dir_for(tmp_path, 1)
        round_dir.mkdir(parents=True)
        (round_dir / "manifest.json").write_text('{"foo": 1}')
        with pytest.raises(ValidationError, match="not a round manifest"):
            load_manifest(round_dir)

    def test_completed_round_returns_without_rerunning(self, tmp_path):
        config, paths = make_pipeline_env(tmp_path)
        workdir = tmp_path / "work"
        (first,) = run_pipeline(config, workdir)
        calls = paths["infer_calls"].read_text()
        again = run_round(workdir, config, 1, paths["ckpt0"])
        assert again["status"] == "completed"
        assert paths["infer_calls"].read_text() == calls


class TestDeterminism:
    def test_identical_runs_write_identical_artifacts(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path)
        work1, work2 = tmp_path / "w1", tmp_path / "w2"
        (m1,) = run_pipeline(config, work1)
        (m2,) = run_pipeline(config, work2)
        d1, d2 = round_dir_for(work1, 1), round_dir_for(work2, 1)
        assert (d1 / "pseudo" / "tgt01.txt").read_bytes() == (
            d2 / "pseudo" / "tgt01.txt"
        ).read_bytes()
        assert (d1 / "mosaic" / "manifest.json").read_bytes() == (
            d2 / "mosaic" / "manifest.json"
        ).read_bytes()
        assert (d1 / "checkpoint_out.tarc").read_bytes() == (
            d2 / "checkpoint_out.tarc"
        ).read_bytes()
        assert m1["checkpoint_out"]["sha256"] == m2["checkpoint_out"]["sha256"]


class TestWorkdirConfig:
    def test_config_mismatch_rejected(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path)
        workdir = tmp_path / "work"
        run_pipeline(config, workdir)
        changed, _ = make_pipeline_env(tmp_path, confidence_threshold=0.9)
        with pytest.raises(ValidationError, match="different configuration"):
            run_pipeline(changed, workdir)

    def test_status_summarizes_rounds(self, tmp_path):
        config, _ = make_pipeline_env(tmp_path, rounds=2)
        workdir = tmp_path / "work"
        run_pipeline(config, workdir)
        status = pipeline_status(workdir)
        assert status["next_round"] == 3
        assert [r["round"] for r in status["rounds"]] == [1, 2]
        assert all(r["status"] == "completed" for r in status["rounds"])
        assert status["rounds"][0]["stages"]["soup"] == "completed"
        assert status["rounds"][0]["checkpoint_out"].endswith("checkpoint_out.tarc")

    def test_status_of_empty_dir(self, tmp_path):
        status = pipeline_status(tmp_path)
        assert status["rounds"] == []
        assert status["next_round"] == 0
