"""Checkpoint <-> tensor-archive conversion.

Export loads a flat key->tensor checkpoint, applies a KeyFilter, casts
every retained entry to float32, and writes a canonical archive whose
metadata records the source file hash and the filter that shaped it.
Import reads an archive back into a framework-loadable checkpoint whose
mapping equals the archive's entries.
"""

from __future__ import annotations

import hashlib
from pathlib import Path

import numpy as np
import torch

from . import tarc
from .errors import CheckpointError
from .filters import KeyFilter, default_filter

TOOL_TAG = "ckpt-bridge"


def _sha256_file(path: str | Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def load_checkpoint(path: str | Path) -> dict[str, object]:
    """Load a checkpoint as a flat key->value mapping."""
    try:
        state = torch.load(path, map_location="cpu", weights_only=True)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    except Exception as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from None
    if not isinstance(state, dict):
        raise CheckpointError(
            f"checkpoint {path} holds {type(state).__name__}, expected a flat mapping"
        )
    for key in state:
        if not isinstance(key, str):
            raise CheckpointError(f"checkpoint key {key!r} is not a string")
    return state


def _as_float32(key: str, value: object) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        try:
            return value.detach().to(torch.float32).cpu().numpy()
        except Exception as exc:
            raise CheckpointError(
                f"entry {key!r} cannot be cast to float32: {exc}"
            ) from None
    try:
        arr = np.asarray(value)
    except Exception:
        arr = np.asarray(None)  # forces the object-dtype rejection below
    if arr.dtype.kind not in "fiub":
        raise CheckpointError(
            f"entry {key!r} is not numeric ({type(value).__name__}); "
            "exclude it or rename it away"
        )
    return arr.astype(np.float32)


def export_checkpoint(
    ckpt_path: str | Path,
    out_path: str | Path,
    key_filter: KeyFilter | None = None,
) -> int:
    """Write the filtered checkpoint as a float32 archive; returns entry count."""
    key_filter = key_filter if key_filter is not None else default_filter()
    state = load_checkpoint(ckpt_path)
    names = key_filter.apply(state.keys())
    tensors = {name: _as_float32(key, state[key]) for key, name in names.items()}
    metadata = {
        "source_sha256": _sha256_file(ckpt_path),
        "cast": "float32",
        "tool": TOOL_TAG,
        **key_filter.describe(),
    }
    tarc.write_file(out_path, tensors, metadata)
    return len(tensors)


def import_checkpoint(archive_path: str | Path, out_path: str | Path) -> int:
    """Write the archive's entries as a loadable checkpoint; returns entry count."""
    tensors, _ = tarc.read_file(archive_path)
    state = {name: torch.from_numpy(arr) for name, arr in tensors.items()}
    torch.save(state, out_path)
    return len(state)
