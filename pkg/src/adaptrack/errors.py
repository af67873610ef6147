"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage problems exit 1, anything
derived from AdaptrackError exits 2, except ExternalCommandError which
exits 3 (a user-supplied helper command failed, not our data).
"""

from __future__ import annotations


class AdaptrackError(Exception):
    """Base class for all toolkit errors."""


class ParseError(AdaptrackError):
    """A text input could not be parsed.

    Carries the 1-based line number when one is known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ValidationError(AdaptrackError):
    """Parsed or constructed data violates an invariant."""


class NumericalError(AdaptrackError):
    """A numerical routine hit NaN input, a singular matrix, or similar."""


class ArchiveError(AdaptrackError):
    """Base class for tensor-archive format errors."""


class BadMagicError(ArchiveError):
    """The stream does not start with the archive magic."""


class UnsupportedVersionError(ArchiveError):
    """The archive declares a format version this build cannot read."""


class TruncatedArchiveError(ArchiveError):
    """The stream ended before the declared content did."""


class CorruptArchiveError(ArchiveError):
    """Structurally invalid archive: bad lengths, ordering, or trailing bytes."""


class IncompatibleArchivesError(AdaptrackError):
    """Archives do not agree on tensor names and shapes."""


class ExternalCommandError(AdaptrackError):
    """An external helper command failed or produced unusable output."""

    def __init__(self, message: str, returncode: int | None = None):
        super().__init__(message)
        self.returncode = returncode
