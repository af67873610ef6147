"""Shared fixtures and builders for the test suite."""

from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from adaptrack.mot_data import BBox, Detection, TrackRecord


def det(frame, x, y, w, h, conf=1.0) -> Detection:
    return Detection(frame, BBox(x, y, w, h), conf)


def rec(frame, tid, x, y, w=10.0, h=20.0, conf=1.0, cls=1, vis=1.0) -> TrackRecord:
    return TrackRecord(frame, tid, BBox(x, y, w, h), conf, cls, vis)


SEQINFO_TEMPLATE = """[Sequence]
name={name}
imDir={imdir}
frameRate=30
seqLength={length}
imWidth={width}
imHeight={height}
imExt={imext}
"""


def write_sequence(
    root,
    name,
    records,
    length=10,
    width=640,
    height=480,
    images=False,
    image_seed=0,
):
    """Lay out one MOT-style sequence dir: seqinfo.ini, gt/gt.txt, optional img1/."""
    from adaptrack.mot_data import write_annotations

    seq = root / name
    (seq / "gt").mkdir(parents=True)
    (seq / "seqinfo.ini").write_text(
        SEQINFO_TEMPLATE.format(
            name=name, imdir="img1", length=length, width=width, height=height,
            imext=".png",
        )
    )
    with open(seq / "gt" / "gt.txt", "w") as fh:
        write_annotations(records, fh)
    if images:
        img_dir = seq / "img1"
        img_dir.mkdir()
        rng = np.random.default_rng(image_seed)
        for frame in range(1, length + 1):
            pixels = rng.integers(0, 256, size=(height, width, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(img_dir / f"{frame:06d}.png")
    return seq


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


# Stub external commands for pipeline/CLI tests. Each is a standalone
# script taking the documented positional arguments; they lean on the
# installed package for archive I/O so scoring stays format-correct.

INFER_STUB = """\
import sys
from pathlib import Path

ckpt, seq_dir, out = sys.argv[1], sys.argv[2], sys.argv[3]
calls = Path(__file__).parent / "infer_calls.log"
with open(calls, "a") as fh:
    fh.write(Path(seq_dir).name + "\\n")
lines = [
    "1,-1,10,8,20,24,0.9",
    "1,-1,60,8,18,20,0.5",
    "2,-1,12,8,20,24,0.85",
    "3,-1,14,8,20,24,0.95",
    "3,-1,60,9,18,20,0.65",
]
Path(out).write_text("\\n".join(lines) + "\\n")
"""

TRAIN_PERTURB_STUB = """\
import sys
import numpy as np
from adaptrack import soup

mosaic_dir, ckpt_in, out_dir = sys.argv[1], sys.argv[2], sys.argv[3]
base = soup.read_archive_file(ckpt_in)
for i, shift in enumerate((0.5, 2.0)):
    tensors = {n: base.tensor(n) + np.float32(shift) for n in base.names()}
    cand = soup.TensorArchive(tensors, {"id": f"cand{i}"})
    soup.write_archive_file(cand, f"{out_dir}/cand_{i:02d}.tarc")
"""

TRAIN_IDENTITY_STUB = """\
import shutil
import sys
from pathlib import Path

shutil.copy(sys.argv[2], Path(sys.argv[3]) / "cand_00.tarc")
"""

TRAIN_FAIL_ON_SENTINEL_STUB = """\
import sys
from pathlib import Path

import numpy as np
from adaptrack import soup

out_dir = Path(sys.argv[3])
if (out_dir.parents[2] / "FAIL").exists():
    print("training exploded", file=sys.stderr)
    sys.exit(7)
base = soup.read_archive_file(sys.argv[2])
for i, shift in enumerate((0.5, 2.0)):
    tensors = {n: base.tensor(n) + np.float32(shift) for n in base.names()}
    cand = soup.TensorArchive(tensors, {"id": f"cand{i}"})
    soup.write_archive_file(cand, f"{out_dir}/cand_{i:02d}.tarc")
"""

EVAL_MEAN_STUB = """\
import sys
import numpy as np
from adaptrack import soup

a = soup.read_archive_file(sys.argv[1])
values = np.concatenate([a.tensor(n).ravel() for n in a.names()])
print(-((float(values.mean()) - 1.0) ** 2))
"""


def write_stub(path, body):
    """Write a stub script and return the command string that runs it."""
    import sys

    path.write_text(body)
    return f"{sys.executable} {path}"


def make_pipeline_env(tmp_path, **config_overrides):
    """Lay out datasets, stub commands, and a warm-up checkpoint.

    Returns (config, paths dict). The config uses tiny canvases and two
    mosaics per round so full rounds stay fast.
    """
    import numpy as np

    from adaptrack.pipeline import PipelineConfig
    from adaptrack.soup import TensorArchive, write_archive_file

    stubs = tmp_path / "stubs"
    stubs.mkdir(exist_ok=True)
    infer_cmd = write_stub(stubs / "infer.py", INFER_STUB)
    train_cmd = write_stub(stubs / "train.py", TRAIN_PERTURB_STUB)
    eval_cmd = write_stub(stubs / "eval.py", EVAL_MEAN_STUB)

    source = tmp_path / "source"
    target = tmp_path / "target"
    if not source.exists():
        write_sequence(
            source, "src01",
            [rec(1, 1, 5, 5, 20, 20), rec(2, 1, 6, 5, 20, 20)],
            length=4, width=96, height=72, images=True, image_seed=1,
        )
        write_sequence(
            target, "tgt01",
            [rec(1, 1, 8, 8, 20, 20)],
            length=4, width=96, height=72, images=True, image_seed=2,
        )

    ckpt0 = tmp_path / "ckpt0.tarc"
    if not ckpt0.exists():
        warmup = TensorArchive(
            {"w": np.zeros(4, dtype=np.float32)}, {"id": "g0"}
        )
        write_archive_file(warmup, ckpt0)

    settings = dict(
        source_dataset=str(source),
        target_dataset=str(target),
        initial_checkpoint=str(ckpt0),
        infer_cmd=infer_cmd,
        train_cmd=train_cmd,
        eval_cmd=eval_cmd,
        rounds=1,
        mosaic_count=2,
        mosaic_canvas=(64, 64),
        seed=5,
    )
    settings.update(config_overrides)
    config = PipelineConfig(**settings)
    paths = {
        "stubs": stubs,
        "source": source,
        "target": target,
        "ckpt0": ckpt0,
        "infer_calls": stubs / "infer_calls.log",
    }
    return config, paths
