"""Key selection and renaming for checkpoint entries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

from .errors import FilterError

# Training-state entries that weight averaging must never see; dropped
# when no explicit filter is given.
DEFAULT_EXCLUDE_PREFIXES = (
    "optimizer",
    "opt.",
    "scheduler",
    "lr_scheduler",
    "ema.",
)


@dataclass(frozen=True)
class KeyFilter:
    """Prefix-based include/exclude plus prefix rename rules.

    A key is kept when it matches at least one include prefix (an empty
    include list keeps everything) and no exclude prefix — exclusion
    always wins. Rename rules run only on kept keys: the first rule whose
    old-prefix matches rewrites that prefix, later rules are not chained.
    """

    include: tuple[str, ...] = ()
    exclude: tuple[str, ...] = ()
    rename: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self):
        for old, _ in self.rename:
            if not isinstance(old, str):
                raise FilterError(f"rename old-prefix must be a string, got {old!r}")

    def keeps(self, key: str) -> bool:
        if any(key.startswith(prefix) for prefix in self.exclude):
            return False
        if not self.include:
            return True
        return any(key.startswith(prefix) for prefix in self.include)

    def rename_key(self, key: str) -> str:
        for old, new in self.rename:
            if key.startswith(old):
                return new + key[len(old):]
        return key

    def apply(self, keys: Iterable[str]) -> dict[str, str]:
        """Map each kept key to its final name; collisions are an error."""
        out: dict[str, str] = {}
        owners: dict[str, str] = {}
        for key in keys:
            if not self.keeps(key):
                continue
            name = self.rename_key(key)
            if not name:
                raise FilterError(f"renaming leaves key {key!r} with an empty name")
            if name in owners:
                raise FilterError(
                    f"rename collision: {owners[name]!r} and {key!r} both map to {name!r}"
                )
            owners[name] = key
            out[key] = name
        return out

    def describe(self) -> dict[str, str]:
        """Filter settings as flat strings, for archive metadata."""
        return {
            "filter_include": ",".join(self.include),
            "filter_exclude": ",".join(self.exclude),
            "filter_rename": ",".join(f"{old}={new}" for old, new in self.rename),
        }


def default_filter() -> KeyFilter:
    return KeyFilter(exclude=DEFAULT_EXCLUDE_PREFIXES)


def parse_rename_rule(spec: str) -> tuple[str, str]:
    """Parse an "OLD=NEW" prefix-rename argument."""
    if "=" not in spec:
        raise FilterError(f"rename rule must look like OLD=NEW, got {spec!r}")
    old, new = spec.split("=", 1)
    return old, new
