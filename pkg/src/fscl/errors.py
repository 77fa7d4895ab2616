"""Exception taxonomy shared by every module.

CLI exit-code mapping: usage/config errors exit 1, data/bundle errors
exit 2, anything else exits 3.
"""


class FsclError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(FsclError):
    """Shapes do not conform for an operation; message names the op and both shapes."""


class UsageError(FsclError):
    """An operation was called outside its contract (bad argument, missing grad, ...)."""


class BatchTooSmallError(UsageError):
    """A batch-level operation needs at least two samples."""


class ConfigError(FsclError):
    """Invalid or inconsistent configuration."""


class ProtocolError(FsclError):
    """Session-protocol violation (overlapping labels, insufficient classes/samples, ...)."""


class DataError(FsclError):
    """Dataset file is malformed or unreadable."""


class BundleError(FsclError):
    """Teacher bundle problem (missing record, dim mismatch, ...)."""


class BundleFormatError(BundleError):
    """Bad magic or unsupported version."""


class BundleCorruptionError(BundleError):
    """Truncated or inconsistent bundle file.

    Carries the byte offset at which reading failed.
    """

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class VocabularyError(BundleError):
    """A required class is absent from the teacher vocabulary."""
