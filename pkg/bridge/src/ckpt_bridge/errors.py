"""Error taxonomy for the checkpoint bridge."""


class BridgeError(Exception):
    """Base class for everything this package raises on purpose."""


class ArchiveFormatError(BridgeError):
    """The tensor-archive bytes violate the wire format."""


class CheckpointError(BridgeError):
    """The checkpoint file cannot be loaded or holds unusable entries."""


class FilterError(BridgeError):
    """A key filter is malformed or produces colliding names."""
