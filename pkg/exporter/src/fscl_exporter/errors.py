class ExportError(Exception):
    """Base class for exporter failures."""


class UsageError(ExportError):
    """Bad arguments or template (exit 1)."""


class DatasetError(ExportError):
    """Unreadable dataset layout or image (exit 2)."""


class CheckpointError(ExportError):
    """Checkpoint cannot be loaded or is not a dual-encoder model (exit 2)."""
