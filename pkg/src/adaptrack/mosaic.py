"""Cross-domain 2x2 mosaic composition with exact box remapping.

A mosaic glues four labeled samples (drawn from a source and a target
pool) onto one canvas split at a jittered center. Planning is separated
from pixel work: plan_mosaic produces a fully deterministic spec, compose
renders it, and the spec is what gets persisted in batch manifests.
"""

from __future__ import annotations

import json
import math
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image

from .errors import ValidationError
from .mot_data import (
    DEFAULT_KEEP_CLASSES,
    BBox,
    TrackRecord,
    group_by_frame,
    parse_ground_truth,
    parse_seqinfo,
    write_annotations,
)

DEFAULT_CANVAS = (1280, 1280)
DEFAULT_JITTER = (0.25, 0.75)
DEFAULT_MIX = (2, 2)


@dataclass(frozen=True)
class LabeledSample:
    """One image with its boxes; the unit mosaics are built from."""

    image_ref: str
    width: int
    height: int
    boxes: tuple[tuple[BBox, int], ...]
    domain: str

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError(
                f"sample size must be >= 1, got {self.width}x{self.height}"
            )
        for box, _ in self.boxes:
            if (
                box.x < 0
                or box.y < 0
                or box.x + box.w > self.width
                or box.y + box.h > self.height
            ):
                raise ValidationError(
                    f"box {box} exceeds image bounds {self.width}x{self.height}"
                    f" in {self.image_ref}"
                )


@dataclass(frozen=True)
class TileSpec:
    """Placement of one scaled-and-cropped sample on the canvas."""

    image_ref: str
    domain: str
    src_w: int
    src_h: int
    scale: float
    scaled_w: int
    scaled_h: int
    crop: tuple[int, int]  # top-left of the crop in the scaled image
    placement: tuple[int, int, int, int]  # x, y, w, h on the canvas

    def to_dict(self) -> dict:
        return {
            "image_ref": self.image_ref,
            "domain": self.domain,
            "src_w": self.src_w,
            "src_h": self.src_h,
            "scale": self.scale,
            "scaled_w": self.scaled_w,
            "scaled_h": self.scaled_h,
            "crop": list(self.crop),
            "placement": list(self.placement),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TileSpec":
        return cls(
            image_ref=data["image_ref"],
            domain=data["domain"],
            src_w=data["src_w"],
            src_h=data["src_h"],
            scale=data["scale"],
            scaled_w=data["scaled_w"],
            scaled_h=data["scaled_h"],
            crop=tuple(data["crop"]),
            placement=tuple(data["placement"]),
        )


@dataclass(frozen=True)
class MosaicSpec:
    """Everything compose() needs; serializable into batch manifests."""

    canvas_w: int
    canvas_h: int
    center: tuple[int, int]
    seed: int
    tiles: tuple[TileSpec, ...]  # TL, TR, BL, BR

    def to_dict(self) -> dict:
        return {
            "canvas": [self.canvas_w, self.canvas_h],
            "center": list(self.center),
            "seed": self.seed,
            "tiles": [t.to_dict() for t in self.tiles],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MosaicSpec":
        return cls(
            canvas_w=data["canvas"][0],
            canvas_h=data["canvas"][1],
            center=tuple(data["center"]),
            seed=data["seed"],
            tiles=tuple(TileSpec.from_dict(t) for t in data["tiles"]),
        )


def _quadrants(w: int, h: int, cx: int, cy: int) -> list[tuple[int, int, int, int]]:
    return [
        (0, 0, cx, cy),
        (cx, 0, w - cx, cy),
        (0, cy, cx, h - cy),
        (cx, cy, w - cx, h - cy),
    ]


def plan_mosaic(
    source_pool: Sequence[LabeledSample],
    target_pool: Sequence[LabeledSample],
    mix: tuple[int, int] = DEFAULT_MIX,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    jitter: tuple[float, float] = DEFAULT_JITTER,
    seed: int = 0,
) -> MosaicSpec:
    """Draw a deterministic mosaic layout from the two pools.

    mix = (n_source, n_target) must sum to four. The split center lands at
    round(u * canvas) for u drawn from the jitter range, clamped so every
    quadrant keeps at least one pixel. Tiles are scaled up just enough to
    cover their quadrant and cropped at a seeded offset.
    """
    n_src, n_tgt = mix
    if n_src < 0 or n_tgt < 0 or n_src + n_tgt != 4:
        raise ValidationError(f"mix must be two non-negative counts summing to 4, got {mix}")
    if n_src > 0 and not source_pool:
        raise ValidationError("source pool is empty but mix requests source tiles")
    if n_tgt > 0 and not target_pool:
        raise ValidationError("target pool is empty but mix requests target tiles")
    w, h = canvas
    if w < 2 or h < 2:
        raise ValidationError(f"canvas must be at least 2x2, got {w}x{h}")
    lo, hi = jitter
    if not (0.0 < lo <= hi < 1.0):
        raise ValidationError(f"jitter range must satisfy 0 < lo <= hi < 1, got {jitter}")

    rng = random.Random(seed)
    cx = min(w - 1, max(1, round(rng.uniform(lo, hi) * w)))
    cy = min(h - 1, max(1, round(rng.uniform(lo, hi) * h)))

    picks = [source_pool[rng.randrange(len(source_pool))] for _ in range(n_src)]
    picks += [target_pool[rng.randrange(len(target_pool))] for _ in range(n_tgt)]
    rng.shuffle(picks)

    tiles = []
    for sample, (qx, qy, qw, qh) in zip(picks, _quadrants(w, h, cx, cy)):
        scale = max(qw / sample.width, qh / sample.height)
        scaled_w = math.ceil(sample.width * scale)
        scaled_h = math.ceil(sample.height * scale)
        crop_x = rng.randrange(scaled_w - qw + 1)
        crop_y = rng.randrange(scaled_h - qh + 1)
        tiles.append(
            TileSpec(
                image_ref=sample.image_ref,
                domain=sample.domain,
                src_w=sample.width,
                src_h=sample.height,
                scale=scale,
                scaled_w=scaled_w,
                scaled_h=scaled_h,
                crop=(crop_x, crop_y),
                placement=(qx, qy, qw, qh),
            )
        )
    return MosaicSpec(w, h, (cx, cy), seed, tuple(tiles))


def remap_bbox(
    bbox: BBox,
    scale: float,
    offset: tuple[float, float],
    clip: tuple[float, float, float, float],
    min_size: float = 2.0,
) -> BBox | None:
    """Scale, translate, and clip a box; None when too little survives.

    Boxes whose clipped width or height falls below min_size (or collapses
    entirely) are dropped.
    """
    dx, dy = offset
    x = bbox.x * scale + dx
    y = bbox.y * scale + dy
    w = bbox.w * scale
    h = bbox.h * scale
    cx, cy, cw, ch = clip
    x0 = max(x, cx)
    y0 = max(y, cy)
    x1 = min(x + w, cx + cw)
    y1 = min(y + h, cy + ch)
    if x1 - x0 <= 0 or y1 - y0 <= 0:
        return None
    if x1 - x0 < min_size or y1 - y0 < min_size:
        return None
    return BBox(x0, y0, x1 - x0, y1 - y0)


def _load_rgb(path: str) -> np.ndarray:
    try:
        with Image.open(path) as img:
            return np.asarray(img.convert("RGB"))
    except FileNotFoundError:
        raise ValidationError(f"image not found: {path}") from None
    except Exception as exc:
        raise ValidationError(f"cannot decode image {path}: {exc}") from None


def read_image_size(path: str) -> tuple[int, int]:
    """(width, height) from the image header without decoding pixels."""
    try:
        with Image.open(path) as img:
            return img.size
    except FileNotFoundError:
        raise ValidationError(f"image not found: {path}") from None
    except Exception as exc:
        raise ValidationError(f"cannot read image header {path}: {exc}") from None


def compose(
    spec: MosaicSpec,
    samples: Sequence[LabeledSample],
    min_size: float = 2.0,
    interp: str = "nearest",
) -> tuple[np.ndarray, list[tuple[BBox, int, str]]]:
    """Render a planned mosaic.

    samples must align with spec.tiles (same image_ref, same order). The
    default nearest-neighbor path uses integer index arithmetic so pixels
    are reproducible bit-for-bit; bilinear is available for training use.
    Returns the HxWx3 uint8 canvas and remapped (box, class, domain) labels.
    """
    if interp not in ("nearest", "bilinear"):
        raise ValidationError(f"unknown interpolation {interp!r}")
    if len(samples) != len(spec.tiles):
        raise ValidationError(
            f"expected {len(spec.tiles)} samples, got {len(samples)}"
        )
    canvas = np.zeros((spec.canvas_h, spec.canvas_w, 3), dtype=np.uint8)
    labels: list[tuple[BBox, int, str]] = []
    for tile, sample in zip(spec.tiles, samples):
        if sample.image_ref != tile.image_ref:
            raise ValidationError(
                f"sample {sample.image_ref!r} does not match tile {tile.image_ref!r}"
            )
        img = _load_rgb(tile.image_ref)
        ih, iw = img.shape[:2]
        if (iw, ih) != (tile.src_w, tile.src_h):
            raise ValidationError(
                f"{tile.image_ref}: expected {tile.src_w}x{tile.src_h}, got {iw}x{ih}"
            )
        qx, qy, qw, qh = tile.placement
        crop_x, crop_y = tile.crop
        if (
            qw < 1
            or qh < 1
            or qx < 0
            or qy < 0
            or qx + qw > spec.canvas_w
            or qy + qh > spec.canvas_h
        ):
            raise ValidationError(f"tile placement {tile.placement} exceeds canvas")
        if (
            tile.scale <= 0
            or crop_x < 0
            or crop_y < 0
            or crop_x + qw > tile.scaled_w
            or crop_y + qh > tile.scaled_h
        ):
            raise ValidationError(
                f"tile crop {tile.crop} exceeds scaled size "
                f"{tile.scaled_w}x{tile.scaled_h}"
            )
        if interp == "nearest":
            xs = (np.arange(crop_x, crop_x + qw) * tile.src_w) // tile.scaled_w
            ys = (np.arange(crop_y, crop_y + qh) * tile.src_h) // tile.scaled_h
            patch = img[np.ix_(ys, xs)]
        else:
            scaled = Image.fromarray(img).resize(
                (tile.scaled_w, tile.scaled_h), Image.BILINEAR
            )
            patch = np.asarray(scaled)[crop_y : crop_y + qh, crop_x : crop_x + qw]
        canvas[qy : qy + qh, qx : qx + qw] = patch

        offset = (qx - crop_x, qy - crop_y)
        clip = (float(qx), float(qy), float(qw), float(qh))
        for box, class_id in sample.boxes:
            out = remap_bbox(box, tile.scale, offset, clip, min_size)
            if out is not None:
                labels.append((out, class_id, tile.domain))
    return canvas, labels


def pool_from_mot(
    dataset_dir: str | Path,
    domain: str,
    labels_dir: str | Path | None = None,
    keep_classes: frozenset[int] | set[int] | None = DEFAULT_KEEP_CLASSES,
) -> list[LabeledSample]:
    """Build a sample pool from a MOT-layout dataset directory.

    Each frame of each sequence becomes one sample (frames without boxes
    included, so unlabeled stretches still contribute backgrounds). Labels
    come from <seq>/gt/gt.txt, or labels_dir/<seq>.txt when given. Boxes
    are clipped to the image bounds; clipped-away boxes are dropped.
    """
    root = Path(dataset_dir)
    seq_dirs = sorted(
        d for d in root.iterdir() if d.is_dir() and (d / "seqinfo.ini").is_file()
    ) if root.is_dir() else []
    if not seq_dirs:
        raise ValidationError(f"no sequences with seqinfo.ini under {root}")

    samples: list[LabeledSample] = []
    for seq_dir in seq_dirs:
        with open(seq_dir / "seqinfo.ini", encoding="utf-8") as fh:
            info = parse_seqinfo(fh)
        if labels_dir is not None:
            gt_path = Path(labels_dir) / f"{seq_dir.name}.txt"
        else:
            gt_path = seq_dir / "gt" / "gt.txt"
        if not gt_path.is_file():
            raise ValidationError(f"missing annotation file {gt_path}")
        with open(gt_path, encoding="utf-8") as fh:
            records = parse_ground_truth(fh, keep_classes)
        by_frame = group_by_frame(records)
        for frame in range(1, info.frame_count + 1):
            image = seq_dir / info.image_dir / f"{frame:06d}{info.image_ext}"
            boxes = []
            for rec in by_frame.get(frame, []):
                clipped = remap_bbox(
                    rec.bbox, 1.0, (0.0, 0.0),
                    (0.0, 0.0, float(info.width), float(info.height)),
                    min_size=0.0,
                )
                if clipped is not None:
                    boxes.append((clipped, rec.class_id))
            samples.append(
                LabeledSample(
                    image_ref=str(image),
                    width=info.width,
                    height=info.height,
                    boxes=tuple(boxes),
                    domain=domain,
                )
            )
    return samples


def _render_item(
    index: int,
    spec: MosaicSpec,
    by_ref: dict[str, LabeledSample],
    out_dir: Path,
    min_size: float,
    interp: str,
) -> tuple[str, str, MosaicSpec]:
    samples = [by_ref[t.image_ref] for t in spec.tiles]
    canvas, labels = compose(spec, samples, min_size, interp)
    image_name = f"mosaic_{index:05d}.png"
    label_name = f"mosaic_{index:05d}.txt"
    Image.fromarray(canvas).save(out_dir / image_name)
    records = [
        TrackRecord(1, i, box, 1.0, class_id, 1.0)
        for i, (box, class_id, _) in enumerate(labels, start=1)
    ]
    with open(out_dir / label_name, "w", encoding="utf-8") as fh:
        write_annotations(records, fh)
    return image_name, label_name, spec


def sample_batch(
    source_pool: Sequence[LabeledSample],
    target_pool: Sequence[LabeledSample],
    count: int,
    out_dir: str | Path,
    mix: tuple[int, int] = DEFAULT_MIX,
    canvas: tuple[int, int] = DEFAULT_CANVAS,
    jitter: tuple[float, float] = DEFAULT_JITTER,
    seed: int = 0,
    min_size: float = 2.0,
    interp: str = "nearest",
    jobs: int = 1,
) -> list[tuple[str, str]]:
    """Render `count` mosaics into out_dir and write a batch manifest.

    Item i is planned with seed XOR i, so any item can be re-derived in
    isolation and the batch is reproducible independent of worker count.
    Returns (image, labels) file name pairs relative to out_dir.
    """
    if count < 0:
        raise ValidationError(f"count must be >= 0, got {count}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    pools: dict[str, LabeledSample] = {}
    for sample in list(source_pool) + list(target_pool):
        pools[sample.image_ref] = sample

    specs = [
        plan_mosaic(source_pool, target_pool, mix, canvas, jitter, seed ^ i)
        for i in range(count)
    ]
    if jobs > 1 and count > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rendered = list(
                pool.map(
                    lambda args: _render_item(*args),
                    [
                        (i, spec, pools, out_dir, min_size, interp)
                        for i, spec in enumerate(specs)
                    ],
                )
            )
    else:
        rendered = [
            _render_item(i, spec, pools, out_dir, min_size, interp)
            for i, spec in enumerate(specs)
        ]

    # The manifest is a JSON list of the rendered specs, each tagged with
    # its output file names; any item can be re-composed from its entry.
    manifest = [
        {"image": image, "labels": label, **spec.to_dict()}
        for image, label, spec in rendered
    ]
    tmp = out_dir / "manifest.json.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, out_dir / "manifest.json")
    return [(image, label) for image, label, _ in rendered]
