"""Checkpoint bridge: key->tensor checkpoints <-> TARC float32 archives."""

from .bridge import export_checkpoint, import_checkpoint, load_checkpoint
from .errors import ArchiveFormatError, BridgeError, CheckpointError, FilterError
from .filters import (
    DEFAULT_EXCLUDE_PREFIXES,
    KeyFilter,
    default_filter,
    parse_rename_rule,
)

__all__ = [
    "ArchiveFormatError",
    "BridgeError",
    "CheckpointError",
    "DEFAULT_EXCLUDE_PREFIXES",
    "FilterError",
    "KeyFilter",
    "default_filter",
    "export_checkpoint",
    "import_checkpoint",
    "load_checkpoint",
    "parse_rename_rule",
]
