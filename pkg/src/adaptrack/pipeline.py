"""Round-based self-training orchestration.

Each round runs infer -> pseudo -> mosaic -> train -> soup against a
working directory laid out as workdir/rounds/round_NNNN/. Every stage
reads its inputs from disk and records its outputs in the round manifest
(written atomically), so a crashed or failed run resumes at the first
incomplete stage without redoing finished work. Inference and training
are external commands supplied by the user; souping and scoring wrap the
archive tooling in this package.
"""

from __future__ import annotations

import hashlib
import json
import os
import shlex
import subprocess
import logging
from dataclasses import dataclass, fields
from datetime import datetime, timezone
from pathlib import Path
from typing import IO

from .errors import ExternalCommandError, ValidationError
from .mosaic import pool_from_mot, sample_batch
from .pseudo_label import PseudoLabelConfig, generate_pseudo_labels
from .mot_data import parse_detections, parse_seqinfo, write_annotations
from .soup import (
    TensorArchive,
    greedy_soup,
    make_command_evaluator,
    read_archive_file,
    run_scoring_command,
    write_archive_file,
)

STAGES = ("infer", "pseudo", "mosaic", "train", "soup")

log = logging.getLogger(__name__)


@dataclass
class PipelineConfig:
    """Static description of a self-training run."""

    source_dataset: str
    target_dataset: str
    initial_checkpoint: str
    infer_cmd: str
    train_cmd: str
    eval_cmd: str
    rounds: int = 1
    confidence_threshold: float = 0.7
    min_box_area: float = 0.0
    assign_ids: bool = False
    mosaic_count: int = 8
    mosaic_canvas: tuple[int, int] = (1280, 1280)
    mosaic_mix: tuple[int, int] = (2, 2)
    mosaic_jitter: tuple[float, float] = (0.25, 0.75)
    include_source_in_finetune: bool = False
    greedy_strict: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("source_dataset", "target_dataset", "initial_checkpoint",
                     "infer_cmd", "train_cmd", "eval_cmd"):
            if not getattr(self, name):
                raise ValidationError(f"pipeline config field {name!r} must be set")
        if self.rounds < 1:
            raise ValidationError(f"rounds must be >= 1, got {self.rounds}")
        if self.mosaic_count < 1:
            raise ValidationError(f"mosaic_count must be >= 1, got {self.mosaic_count}")
        self.mosaic_canvas = tuple(self.mosaic_canvas)
        self.mosaic_mix = tuple(self.mosaic_mix)
        self.mosaic_jitter = tuple(self.mosaic_jitter)
        # Reuse the target-stage validation for threshold ranges.
        PseudoLabelConfig(self.confidence_threshold, self.min_box_area, self.assign_ids)

    def to_dict(self) -> dict:
        return {
            "source_dataset": self.source_dataset,
            "target_dataset": self.target_dataset,
            "initial_checkpoint": self.initial_checkpoint,
            "infer_cmd": self.infer_cmd,
            "train_cmd": self.train_cmd,
            "eval_cmd": self.eval_cmd,
            "rounds": self.rounds,
            "confidence_threshold": self.confidence_threshold,
            "min_box_area": self.min_box_area,
            "assign_ids": self.assign_ids,
            "mosaic_count": self.mosaic_count,
            "mosaic_canvas": list(self.mosaic_canvas),
            "mosaic_mix": list(self.mosaic_mix),
            "mosaic_jitter": list(self.mosaic_jitter),
            "include_source_in_finetune": self.include_source_in_finetune,
            "greedy_strict": self.greedy_strict,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PipelineConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValidationError(f"unknown pipeline config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_json(cls, stream: IO[str] | str) -> "PipelineConfig":
        text = stream if isinstance(stream, str) else stream.read()
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"invalid pipeline config JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ValidationError("pipeline config JSON must be an object")
        return cls.from_dict(data)


def _sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _write_json_atomic(path: Path, data: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)


def round_dir_for(workdir: str | Path, round_index: int) -> Path:
    return Path(workdir) / "rounds" / f"round_{round_index:04d}"


def load_manifest(round_dir: str | Path) -> dict | None:
    path = Path(round_dir) / "manifest.json"
    if not path.is_file():
        return None
    try:
        with open(path, encoding="utf-8") as fh:
            manifest = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValidationError(f"corrupt manifest {path}: {exc}") from None
    if not isinstance(manifest, dict) or "round" not in manifest:
        raise ValidationError(f"corrupt manifest {path}: not a round manifest")
    return manifest


def resume_round(workdir: str | Path) -> int:
    """First round that still needs work: 0 for a fresh workdir, N+1 when
    all N rounds completed, otherwise the first non-completed round."""
    rounds_dir = Path(workdir) / "rounds"
    if not rounds_dir.is_dir():
        return 0
    index = 1
    seen_any = False
    while True:
        manifest = load_manifest(round_dir_for(workdir, index))
        if manifest is None:
            break
        seen_any = True
        if manifest.get("status") != "completed":
            return index
        index += 1
    return index if seen_any else 0


def _list_sequences(dataset_dir: str | Path) -> list[tuple[str, Path]]:
    root = Path(dataset_dir)
    if not root.is_dir():
        raise ValidationError(f"dataset directory not found: {root}")
    out = []
    for entry in sorted(root.iterdir()):
        if entry.is_dir() and (entry / "seqinfo.ini").is_file():
            out.append((entry.name, entry))
    if not out:
        raise ValidationError(f"no sequences with seqinfo.ini under {root}")
    return out


def _run_external(cmd: str, args: list[str], stage: str) -> None:
    argv = shlex.split(cmd) + args
    try:
        proc = subprocess.run(argv, capture_output=True, text=True)
    except OSError as exc:
        raise ExternalCommandError(f"{stage}: cannot run {argv[0]!r}: {exc}") from None
    if proc.returncode != 0:
        tail = proc.stderr.strip().splitlines()[-1:] or [""]
        raise ExternalCommandError(
            f"{stage}: {argv[0]!r} exited {proc.returncode}: {tail[0]}",
            returncode=proc.returncode,
        )


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _fresh_manifest(round_index: int, config: PipelineConfig) -> dict:
    return {
        "round": round_index,
        "status": "running",
        "failed_stage": None,
        "error": None,
        "source_dataset": config.source_dataset,
        "target_dataset": config.target_dataset,
        "pseudo_labels": "pseudo",
        "threshold": config.confidence_threshold,
        "checkpoint_in": None,
        "checkpoint_out": None,
        "mosaic_seed": None,
        "mix": None,
        "metrics": None,
        "created": _now(),
        "updated": _now(),
        "stages": {name: {"status": "pending", "artifacts": []} for name in STAGES},
    }


class _Round:
    """One round's stage runner, bound to its directory and manifest."""

    def __init__(self, workdir: Path, config: PipelineConfig, round_index: int,
                 checkpoint_in: Path, jobs: int):
        self.workdir = workdir
        self.config = config
        self.index = round_index
        self.checkpoint_in = checkpoint_in
        self.jobs = jobs
        self.dir = round_dir_for(workdir, round_index)
        self.det_dir = self.dir / "det"
        self.pseudo_dir = self.dir / "pseudo"
        self.mosaic_dir = self.dir / "mosaic"
        self.candidates_dir = self.dir / "candidates"
        self.checkpoint_out = self.dir / "checkpoint_out.tarc"

    def save(self, manifest: dict) -> None:
        manifest["updated"] = _now()
        _write_json_atomic(self.dir / "manifest.json", manifest)

    def _stage_infer(self, manifest: dict) -> list[str]:
        self.det_dir.mkdir(exist_ok=True)
        artifacts = []
        for name, seq_dir in _list_sequences(self.config.target_dataset):
            det_path = self.det_dir / f"{name}.txt"
            _run_external(
                self.config.infer_cmd,
                [str(self.checkpoint_in), str(seq_dir), str(det_path)],
                "infer",
            )
            if not det_path.is_file():
                raise ExternalCommandError(
                    f"infer: command did not produce {det_path}"
                )
            artifacts.append(str(det_path.relative_to(self.dir)))
        return artifacts

    def _stage_pseudo(self, manifest: dict) -> list[str]:
        self.pseudo_dir.mkdir(exist_ok=True)
        pl_config = PseudoLabelConfig(
            self.config.confidence_threshold,
            self.config.min_box_area,
            self.config.assign_ids,
        )
        artifacts = []
        for name, seq_dir in _list_sequences(self.config.target_dataset):
            det_path = self.det_dir / f"{name}.txt"
            if not det_path.is_file():
                raise ValidationError(f"pseudo: missing detections {det_path}")
            with open(det_path, encoding="utf-8") as fh:
                detections = parse_detections(fh)
            with open(seq_dir / "seqinfo.ini", encoding="utf-8") as fh:
                info = parse_seqinfo(fh)
            records = generate_pseudo_labels(
                list(detections), pl_config, frame_count=info.frame_count
            )
            out_path = self.pseudo_dir / f"{name}.txt"
            tmp = out_path.with_suffix(".tmp")
            with open(tmp, "w", encoding="utf-8") as fh:
                write_annotations(records, fh)
            os.replace(tmp, out_path)
            artifacts.append(str(out_path.relative_to(self.dir)))
        return artifacts

    def _effective_mix(self) -> tuple[int, int]:
        if self.index > 1 and not self.config.include_source_in_finetune:
            return (0, 4)
        return self.config.mosaic_mix

    def _stage_mosaic(self, manifest: dict) -> list[str]:
        mix = self._effective_mix()
        seed = self.config.seed ^ self.index
        manifest["mix"] = list(mix)
        manifest["mosaic_seed"] = seed
        target_pool = pool_from_mot(
            self.config.target_dataset, "target", labels_dir=self.pseudo_dir
        )
        source_pool = (
            pool_from_mot(self.config.source_dataset, "source")
            if mix[0] > 0
            else []
        )
        pairs = sample_batch(
            source_pool,
            target_pool,
            self.config.mosaic_count,
            self.mosaic_dir,
            mix=mix,
            canvas=self.config.mosaic_canvas,
            jitter=self.config.mosaic_jitter,
            seed=seed,
            jobs=self.jobs,
        )
        artifacts = ["mosaic/manifest.json"]
        artifacts += [f"mosaic/{image}" for image, _ in pairs]
        return artifacts

    def _stage_train(self, manifest: dict) -> list[str]:
        self.candidates_dir.mkdir(exist_ok=True)
        _run_external(
            self.config.train_cmd,
            [str(self.mosaic_dir), str(self.checkpoint_in), str(self.candidates_dir)],
            "train",
        )
        candidates = sorted(self.candidates_dir.glob("*.tarc"))
        if not candidates:
            raise ExternalCommandError("train: command produced no .tarc candidates")
        return [str(p.relative_to(self.dir)) for p in candidates]

    def _stage_soup(self, manifest: dict) -> list[str]:
        candidates = sorted(self.candidates_dir.glob("*.tarc"))
        if not candidates:
            raise ValidationError("soup: no training candidates on disk")
        paths = [self.checkpoint_in] + candidates
        unique: list[tuple[TensorArchive, Path]] = []
        seen: set[str] = set()
        for path in paths:
            archive = read_archive_file(path)
            digest = archive.content_hash()
            if digest in seen:
                continue
            seen.add(digest)
            unique.append((archive, path))

        eval_argv = shlex.split(self.config.eval_cmd)
        scored = [
            (archive, run_scoring_command(eval_argv, path))
            for archive, path in unique
        ]
        result = greedy_soup(
            scored,
            make_command_evaluator(self.config.eval_cmd),
            strict=self.config.greedy_strict,
        )
        final = TensorArchive(
            dict(result.archive.items()),
            {**result.archive.metadata, "round": str(self.index)},
        )
        write_archive_file(final, self.checkpoint_out)
        _write_json_atomic(self.dir / "soup_log.json", result.to_dict())
        manifest["checkpoint_out"] = {
            "path": str(self.checkpoint_out),
            "sha256": _sha256_file(self.checkpoint_out),
        }
        return ["checkpoint_out.tarc", "soup_log.json"]


def run_round(
    workdir: str | Path,
    config: PipelineConfig,
    round_index: int,
    checkpoint_in: str | Path,
    expected_checkpoint_hash: str | None = None,
    jobs: int = 1,
) -> dict:
    """Run (or resume) one round; returns the round manifest."""
    if round_index < 1:
        raise ValidationError(f"round index must be >= 1, got {round_index}")
    workdir = Path(workdir)
    checkpoint_in = Path(checkpoint_in)
    runner = _Round(workdir, config, round_index, checkpoint_in, jobs)
    runner.dir.mkdir(parents=True, exist_ok=True)

    manifest = load_manifest(runner.dir) or _fresh_manifest(round_index, config)
    if manifest["round"] != round_index:
        raise ValidationError(
            f"manifest in {runner.dir} is for round {manifest['round']}"
        )
    if manifest["status"] == "completed":
        return manifest

    if not checkpoint_in.is_file():
        raise ValidationError(f"input checkpoint not found: {checkpoint_in}")
    actual_hash = _sha256_file(checkpoint_in)
    if expected_checkpoint_hash and actual_hash != expected_checkpoint_hash:
        raise ValidationError(
            f"checkpoint {checkpoint_in} hash {actual_hash[:12]} does not match "
            f"the previous round's recorded output {expected_checkpoint_hash[:12]}"
        )
    recorded = manifest.get("checkpoint_in")
    if recorded and recorded["sha256"] != actual_hash:
        raise ValidationError(
            f"checkpoint {checkpoint_in} changed since this round started "
            f"(was {recorded['sha256'][:12]}, now {actual_hash[:12]})"
        )
    manifest["checkpoint_in"] = {"path": str(checkpoint_in), "sha256": actual_hash}
    manifest["status"] = "running"
    manifest["failed_stage"] = None
    manifest["error"] = None
    runner.save(manifest)

    stage_fns = {
        "infer": runner._stage_infer,
        "pseudo": runner._stage_pseudo,
        "mosaic": runner._stage_mosaic,
        "train": runner._stage_train,
        "soup": runner._stage_soup,
    }
    for stage in STAGES:
        if manifest["stages"][stage]["status"] == "completed":
            log.info("round %d: stage %s already completed, skipping", round_index, stage)
            continue
        log.info("round %d: running stage %s", round_index, stage)
        try:
            artifacts = stage_fns[stage](manifest)
        except Exception as exc:
            manifest["status"] = "failed"
            manifest["failed_stage"] = stage
            manifest["error"] = str(exc)
            runner.save(manifest)
            raise
        manifest["stages"][stage] = {"status": "completed", "artifacts": artifacts}
        runner.save(manifest)

    manifest["status"] = "completed"
    runner.save(manifest)
    return manifest


def run_pipeline(
    config: PipelineConfig,
    workdir: str | Path,
    jobs: int = 1,
) -> list[dict]:
    """Run all configured rounds, resuming whatever already exists."""
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    config_path = workdir / "config.json"
    resolved = config.to_dict()
    if config_path.is_file():
        with open(config_path, encoding="utf-8") as fh:
            try:
                existing = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ValidationError(f"corrupt {config_path}: {exc}") from None
        if existing != resolved:
            raise ValidationError(
                f"{config_path} was written by a different configuration; "
                "refusing to mix runs in one workdir"
            )
    else:
        _write_json_atomic(config_path, resolved)

    manifests = []
    for round_index in range(1, config.rounds + 1):
        if round_index == 1:
            checkpoint_in = Path(config.initial_checkpoint)
            expected = None
        else:
            prev = load_manifest(round_dir_for(workdir, round_index - 1))
            # The loop just ran (or skipped) the previous round, so a
            # missing or incomplete manifest here is a real inconsistency.
            if prev is None or prev.get("status") != "completed":
                raise ValidationError(
                    f"round {round_index - 1} is not completed; cannot continue"
                )
            checkpoint_in = Path(prev["checkpoint_out"]["path"])
            expected = prev["checkpoint_out"]["sha256"]
        manifests.append(
            run_round(workdir, config, round_index, checkpoint_in, expected, jobs)
        )
    return manifests


def pipeline_status(workdir: str | Path) -> dict:
    """Summarize round manifests in a workdir."""
    workdir = Path(workdir)
    rounds = []
    rounds_dir = workdir / "rounds"
    if rounds_dir.is_dir():
        for entry in sorted(rounds_dir.iterdir()):
            if not entry.is_dir() or not entry.name.startswith("round_"):
                continue
            manifest = load_manifest(entry)
            if manifest is None:
                continue
            rounds.append(
                {
                    "round": manifest["round"],
                    "status": manifest["status"],
                    "failed_stage": manifest.get("failed_stage"),
                    "stages": {
                        name: info["status"]
                        for name, info in manifest.get("stages", {}).items()
                    },
                    "checkpoint_out": (manifest.get("checkpoint_out") or {}).get("path"),
                }
            )
    return {"workdir": str(workdir), "rounds": rounds, "next_round": resume_round(workdir)}
