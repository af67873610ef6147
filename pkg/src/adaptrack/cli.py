"""Single entry point for all stages: track, eval, pseudo, mosaic, soup, pipeline.

Exit codes: 0 success, 1 usage error, 2 data/validation error, 3 external
command failure. With --output json every result is one JSON document on
stdout and errors are single-line JSON objects on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from . import metrics as metrics_mod
from .errors import AdaptrackError, ExternalCommandError, ValidationError
from .mosaic import pool_from_mot, sample_batch
from .mot_data import parse_detections, parse_ground_truth, parse_seqinfo, write_annotations
from .pipeline import PipelineConfig, pipeline_status, run_pipeline
from .pseudo_label import PseudoLabelConfig, generate_pseudo_labels
from .soup import (
    SoupResult,
    greedy_soup,
    make_command_evaluator,
    read_archive_file,
    uniform_soup,
    write_archive_file,
)
from .tracker import TrackerConfig, run_sequence

log = logging.getLogger("adaptrack")


@dataclass
class GlobalOptions:
    verbosity: int = 0
    seed: int | None = None
    config_path: str | None = None
    output: str = "human"
    jobs: int = 0  # 0 = available cores

    def effective_jobs(self) -> int:
        return self.jobs if self.jobs > 0 else (os.cpu_count() or 1)


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; 2 is reserved for data errors here.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = argparse.SUPPRESS if suppress else None
    parser.add_argument(
        "--output",
        choices=("human", "json"),
        default=d if suppress else "human",
        help="result rendering on stdout",
    )
    parser.add_argument(
        "--jobs",
        type=int,
        default=d if suppress else 0,
        help="worker pool size for parallel stages (0 = all cores)",
    )
    parser.add_argument(
        "--seed",
        type=int,
        default=d if suppress else None,
        help="override the seed of any stochastic stage",
    )
    parser.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=d if suppress else 0,
        help="increase log verbosity (repeatable)",
    )


def _parse_pair(text: str, sep: str, what: str) -> tuple[int, int]:
    parts = text.split(sep)
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"{what} must look like N{sep}M, got {text!r}")
    try:
        return int(parts[0]), int(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be integers, got {text!r}") from None


def _parse_float_pair(text: str) -> tuple[float, float]:
    parts = text.split(",")
    if len(parts) != 2:
        raise argparse.ArgumentTypeError(f"expected LO,HI, got {text!r}")
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected two floats, got {text!r}") from None


def build_parser() -> _Parser:
    parser = _Parser(prog="adaptrack", description=__doc__)
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text, parents=[], add_help=True)
        _add_global_flags(p, suppress=True)
        return p

    p = command("track", "run the tracker over a detection file")
    p.add_argument("--det", required=True, help="detection file (frame,-1,x,y,w,h,conf,...)")
    p.add_argument("--seqinfo", required=True, help="seqinfo.ini of the sequence")
    p.add_argument("--out", required=True, help="output result file")
    p.add_argument("--config", help="tracker config JSON")
    p.set_defaults(func=cmd_track)

    p = command("eval", "score tracker results against ground truth")
    p.add_argument("--gt", required=True, help="dataset dir with <seq>/gt/gt.txt")
    p.add_argument("--results", required=True, help="dir with <seq>.txt result files")
    p.add_argument("--seqmap", help="file listing sequence names to evaluate")
    p.add_argument("--report", required=True, help="where to write the JSON report")
    p.set_defaults(func=cmd_eval)

    p = command("pseudo", "confidence-filter detections into pseudo ground truth")
    p.add_argument("--det", required=True, help="dir of per-sequence detection files")
    p.add_argument("--out", required=True, help="output dir for pseudo-GT files")
    p.add_argument("--threshold", type=float, default=0.7, help="confidence cutoff")
    p.add_argument("--min-area", type=float, default=0.0, help="minimum box area in px^2")
    p.add_argument("--track", action="store_true", help="assign ids with the tracker")
    p.add_argument("--config", help="tracker config JSON (with --track)")
    p.set_defaults(func=cmd_pseudo)

    p = command("mosaic", "render cross-domain 2x2 mosaics")
    p.add_argument("--source", help="source-domain MOT dataset dir")
    p.add_argument("--target", required=True, help="target-domain MOT dataset dir")
    p.add_argument("--target-labels", help="use these per-sequence label files for the target")
    p.add_argument("--count", type=int, required=True, help="number of mosaics")
    p.add_argument("--mix", type=lambda s: _parse_pair(s, ",", "--mix"), default=(2, 2),
                   help="tiles per mosaic as SOURCE,TARGET (default 2,2)")
    p.add_argument("--size", type=lambda s: _parse_pair(s, "x", "--size"),
                   default=(1280, 1280), help="canvas as WxH (default 1280x1280)")
    p.add_argument("--jitter", type=_parse_float_pair, default=(0.25, 0.75),
                   help="center jitter range as LO,HI (default 0.25,0.75)")
    p.add_argument("--interp", choices=("nearest", "bilinear"), default="nearest")
    p.add_argument("--out", required=True, help="output dir")
    p.set_defaults(func=cmd_mosaic, seed_default=0)

    p = command("soup", "average checkpoint archives")
    soup_sub = p.add_subparsers(dest="soup_command", metavar="RECIPE")
    pu = soup_sub.add_parser("uniform", help="plain mean of the inputs")
    _add_global_flags(pu, suppress=True)
    pu.add_argument("--in", dest="inputs", nargs="+", required=True, metavar="ARCHIVE")
    pu.add_argument("--out", required=True, help="output archive")
    pu.set_defaults(func=cmd_soup_uniform)
    pg = soup_sub.add_parser("greedy", help="greedy soup driven by an evaluator command")
    _add_global_flags(pg, suppress=True)
    pg.add_argument("--candidates", required=True,
                    help="text file: one '<archive path> <val score>' per line")
    pg.add_argument("--eval-cmd", required=True,
                    help="scoring command, invoked as CMD <archive>")
    pg.add_argument("--strict", action="store_true",
                    help="require strict improvement to accept an ingredient")
    pg.add_argument("--out", required=True, help="output archive")
    pg.add_argument("--log", help="where to write the acceptance log JSON")
    pg.set_defaults(func=cmd_soup_greedy)
    p.set_defaults(func=cmd_soup_usage)

    p = command("pipeline", "multi-round self-training orchestration")
    pipe_sub = p.add_subparsers(dest="pipeline_command", metavar="ACTION")
    pr = pipe_sub.add_parser("run", help="run all configured rounds")
    _add_global_flags(pr, suppress=True)
    pr.add_argument("--config", required=True, help="pipeline config JSON")
    pr.add_argument("--workdir", default=os.environ.get("ADAPTRACK_WORKDIR"),
                    help="working directory (default: $ADAPTRACK_WORKDIR)")
    pr.set_defaults(func=cmd_pipeline_run)
    pp = pipe_sub.add_parser("resume", help="continue from the stored config")
    _add_global_flags(pp, suppress=True)
    pp.add_argument("--workdir", default=os.environ.get("ADAPTRACK_WORKDIR"),
                    help="working directory (default: $ADAPTRACK_WORKDIR)")
    pp.set_defaults(func=cmd_pipeline_resume)
    ps = pipe_sub.add_parser("status", help="summarize round manifests")
    _add_global_flags(ps, suppress=True)
    ps.add_argument("--workdir", default=os.environ.get("ADAPTRACK_WORKDIR"),
                    help="working directory (default: $ADAPTRACK_WORKDIR)")
    ps.set_defaults(func=cmd_pipeline_status)
    p.set_defaults(func=cmd_pipeline_usage)

    return parser


def _emit(opts: GlobalOptions, payload: dict, human: str) -> None:
    if opts.output == "json":
        print(json.dumps(payload, sort_keys=True))
    else:
        print(human)


def _require(parser_path: str, condition: bool, message: str) -> None:
    if not condition:
        print(f"{parser_path}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def cmd_track(args, opts: GlobalOptions) -> int:
    config = TrackerConfig()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            config = TrackerConfig.from_json(fh)
    with open(args.seqinfo, encoding="utf-8") as fh:
        info = parse_seqinfo(fh)
    with open(args.det, encoding="utf-8") as fh:
        detections = parse_detections(fh)
    records = run_sequence(config, list(detections), info.frame_count)
    with open(args.out, "w", encoding="utf-8") as fh:
        written = write_annotations(records, fh)
    payload = {
        "sequence": info.name,
        "records": len(records),
        "tracks": len({r.track_id for r in records}),
        "bytes": written,
        "out": args.out,
    }
    _emit(opts, payload,
          f"{info.name}: {payload['records']} records, {payload['tracks']} tracks -> {args.out}")
    return 0


def _read_seqmap(path: str) -> list[str]:
    names = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            name = line.strip()
            if not name or name.lower() == "name":
                continue
            names.append(name)
    if not names:
        raise ValidationError(f"seqmap {path} lists no sequences")
    return names


def cmd_eval(args, opts: GlobalOptions) -> int:
    gt_root = Path(args.gt)
    res_root = Path(args.results)
    if args.seqmap:
        names = _read_seqmap(args.seqmap)
    else:
        names = sorted(
            d.name for d in gt_root.iterdir()
            if d.is_dir() and (d / "gt" / "gt.txt").is_file()
        ) if gt_root.is_dir() else []
    if not names:
        raise ValidationError(f"no sequences found under {gt_root}")

    def load(name: str):
        gt_path = gt_root / name / "gt" / "gt.txt"
        res_path = res_root / f"{name}.txt"
        if not gt_path.is_file():
            raise ValidationError(f"sequence {name!r}: missing {gt_path}")
        if not res_path.is_file():
            raise ValidationError(f"sequence {name!r}: missing {res_path}")
        with open(gt_path, encoding="utf-8") as fh:
            gt = list(parse_ground_truth(fh))
        with open(res_path, encoding="utf-8") as fh:
            pred = list(parse_ground_truth(fh, keep_classes=None, require_flag=False))
        return name, gt, pred

    with ThreadPoolExecutor(max_workers=opts.effective_jobs()) as pool:
        triples = list(pool.map(load, names))
    report = metrics_mod.evaluate(triples)
    doc = report.to_dict()
    report_path = Path(args.report)
    if report_path.parent and not report_path.parent.is_dir():
        report_path.parent.mkdir(parents=True, exist_ok=True)
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")

    lines = [
        f"{'sequence':<20} {'HOTA':>7} {'MOTA':>7} {'IDF1':>7} {'DetA':>7} {'AssA':>7}"
    ]
    for name, seq in report.per_sequence.items():
        lines.append(
            f"{name:<20} {seq.hota.hota:>7.4f} {seq.clear.mota:>7.4f} "
            f"{seq.idf1:>7.4f} {seq.hota.deta:>7.4f} {seq.hota.assa:>7.4f}"
        )
    lines.append(
        f"{'OVERALL':<20} {report.hota:>7.4f} {report.mota:>7.4f} "
        f"{report.idf1:>7.4f} {report.deta:>7.4f} {report.assa:>7.4f}"
    )
    _emit(opts, doc, "\n".join(lines))
    return 0


def cmd_pseudo(args, opts: GlobalOptions) -> int:
    det_dir = Path(args.det)
    if not det_dir.is_dir():
        raise ValidationError(f"detection directory not found: {det_dir}")
    det_files = sorted(det_dir.glob("*.txt"))
    if not det_files:
        raise ValidationError(f"no .txt detection files under {det_dir}")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config = PseudoLabelConfig(args.threshold, args.min_area, args.track)
    tracker_config = None
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            tracker_config = TrackerConfig.from_json(fh)

    summary = {}
    for det_file in det_files:
        with open(det_file, encoding="utf-8") as fh:
            detections = parse_detections(fh)
        records = generate_pseudo_labels(list(detections), config, tracker_config)
        out_path = out_dir / det_file.name
        with open(out_path, "w", encoding="utf-8") as fh:
            write_annotations(records, fh)
        summary[det_file.stem] = {"detections": len(detections), "kept": len(records)}

    payload = {"threshold": args.threshold, "out": str(out_dir), "sequences": summary}
    human = "\n".join(
        f"{name}: kept {info['kept']}/{info['detections']} -> {out_dir / (name + '.txt')}"
        for name, info in summary.items()
    )
    _emit(opts, payload, human)
    return 0


def cmd_mosaic(args, opts: GlobalOptions) -> int:
    mix = tuple(args.mix)
    if mix[0] > 0 and not args.source:
        raise ValidationError("--source is required when --mix requests source tiles")
    source_pool = pool_from_mot(args.source, "source") if mix[0] > 0 else []
    target_pool = pool_from_mot(
        args.target, "target", labels_dir=args.target_labels
    )
    seed = opts.seed if opts.seed is not None else getattr(args, "seed_default", 0)
    pairs = sample_batch(
        source_pool,
        target_pool,
        args.count,
        args.out,
        mix=mix,
        canvas=tuple(args.size),
        jitter=tuple(args.jitter),
        seed=seed,
        interp=args.interp,
        jobs=opts.effective_jobs(),
    )
    payload = {
        "count": len(pairs),
        "mix": list(mix),
        "seed": seed,
        "out": args.out,
        "manifest": str(Path(args.out) / "manifest.json"),
    }
    _emit(opts, payload, f"wrote {len(pairs)} mosaics to {args.out} (seed {seed})")
    return 0


def cmd_soup_usage(args, opts: GlobalOptions) -> int:
    print("adaptrack soup: choose a recipe: uniform | greedy", file=sys.stderr)
    return 1


def cmd_soup_uniform(args, opts: GlobalOptions) -> int:
    archives = [read_archive_file(p) for p in args.inputs]
    result = uniform_soup(archives)
    write_archive_file(result, args.out)
    payload = {
        "out": args.out,
        "tensors": len(result),
        "ingredients": len(archives),
    }
    _emit(opts, payload,
          f"averaged {len(archives)} archives ({len(result)} tensors) -> {args.out}")
    return 0


def _read_candidates(path: str) -> list[tuple[str, float]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.rsplit(None, 1)
            if len(parts) != 2:
                raise ValidationError(
                    f"{path}:{lineno}: expected '<archive path> <score>'"
                )
            try:
                score = float(parts[1])
            except ValueError:
                raise ValidationError(
                    f"{path}:{lineno}: bad score {parts[1]!r}"
                ) from None
            out.append((parts[0], score))
    if not out:
        raise ValidationError(f"candidate list {path} is empty")
    return out


def cmd_soup_greedy(args, opts: GlobalOptions) -> int:
    candidates = [
        (read_archive_file(path), score)
        for path, score in _read_candidates(args.candidates)
    ]
    result: SoupResult = greedy_soup(
        candidates, make_command_evaluator(args.eval_cmd), strict=args.strict
    )
    write_archive_file(result.archive, args.out)
    if args.log:
        with open(args.log, "w", encoding="utf-8") as fh:
            json.dump(result.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    accepted = sum(1 for entry in result.log if entry.accepted)
    payload = result.to_dict()
    payload["out"] = args.out
    _emit(opts, payload,
          f"greedy soup: accepted {accepted}/{len(result.log)} ingredients, "
          f"final score {result.final_score} -> {args.out}")
    return 0


def _workdir_or_usage(args) -> str:
    if not args.workdir:
        print(
            "adaptrack pipeline: error: --workdir is required "
            "(or set ADAPTRACK_WORKDIR)",
            file=sys.stderr,
        )
        raise SystemExit(1)
    return args.workdir


def cmd_pipeline_usage(args, opts: GlobalOptions) -> int:
    print("adaptrack pipeline: choose an action: run | resume | status", file=sys.stderr)
    return 1


def _pipeline_summary(opts: GlobalOptions, manifests: list[dict], workdir: str) -> None:
    payload = {
        "workdir": workdir,
        "rounds": [
            {
                "round": m["round"],
                "status": m["status"],
                "checkpoint_out": (m.get("checkpoint_out") or {}).get("path"),
            }
            for m in manifests
        ],
    }
    human = "\n".join(
        f"round {m['round']}: {m['status']}"
        + (f" -> {m['checkpoint_out']['path']}" if m.get("checkpoint_out") else "")
        for m in manifests
    )
    _emit(opts, payload, human)


def cmd_pipeline_run(args, opts: GlobalOptions) -> int:
    workdir = _workdir_or_usage(args)
    with open(args.config, encoding="utf-8") as fh:
        config = PipelineConfig.from_json(fh)
    if opts.seed is not None:
        config.seed = opts.seed
    manifests = run_pipeline(config, workdir, jobs=opts.effective_jobs())
    _pipeline_summary(opts, manifests, workdir)
    return 0


def cmd_pipeline_resume(args, opts: GlobalOptions) -> int:
    workdir = _workdir_or_usage(args)
    config_path = Path(workdir) / "config.json"
    if not config_path.is_file():
        raise ValidationError(
            f"{config_path} not found; run 'pipeline run' first"
        )
    with open(config_path, encoding="utf-8") as fh:
        config = PipelineConfig.from_json(fh)
    manifests = run_pipeline(config, workdir, jobs=opts.effective_jobs())
    _pipeline_summary(opts, manifests, workdir)
    return 0


def cmd_pipeline_status(args, opts: GlobalOptions) -> int:
    workdir = _workdir_or_usage(args)
    status = pipeline_status(workdir)
    human_lines = [f"workdir: {status['workdir']}"]
    for entry in status["rounds"]:
        stages = " ".join(
            f"{name}={value}" for name, value in entry["stages"].items()
        )
        human_lines.append(f"round {entry['round']}: {entry['status']} ({stages})")
    human_lines.append(f"next round: {status['next_round']}")
    _emit(opts, status, "\n".join(human_lines))
    return 0


def _print_error(opts: GlobalOptions, exc: Exception) -> None:
    if opts.output == "json":
        print(
            json.dumps(
                {"error": type(exc).__name__, "message": str(exc)}, sort_keys=True
            ),
            file=sys.stderr,
        )
    else:
        print(f"adaptrack: error: {exc}", file=sys.stderr)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    opts = GlobalOptions(
        verbosity=getattr(args, "verbose", 0),
        seed=getattr(args, "seed", None),
        config_path=getattr(args, "config", None),
        output=getattr(args, "output", "human"),
        jobs=getattr(args, "jobs", 0),
    )
    levels = {0: logging.WARNING, 1: logging.INFO}
    logging.basicConfig(
        stream=sys.stderr,
        level=levels.get(opts.verbosity, logging.DEBUG),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return 1
    try:
        return args.func(args, opts)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ExternalCommandError as exc:
        _print_error(opts, exc)
        return 3
    except AdaptrackError as exc:
        _print_error(opts, exc)
        return 2
    except OSError as exc:
        _print_error(opts, exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
