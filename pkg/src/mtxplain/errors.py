"""Exception hierarchy shared across the package.

Every error raised on purpose derives from MtxError so callers (and the CLI)
can tell validation problems apart from genuine bugs.
"""


class MtxError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(MtxError):
    """An array or tensor does not have the shape an operation requires."""


class ConfigError(MtxError):
    """A configuration value is missing, unknown, or out of range."""


class DataError(MtxError):
    """An input record or label violates the documented data contract."""


class FormatError(MtxError):
    """A file could not be parsed in the expected on-disk format."""


class DictionaryError(MtxError):
    """A bilingual dictionary is unusable (too few resolvable pairs)."""


class StratificationError(MtxError):
    """A class is too small to spread across the requested folds."""


class CheckpointError(MtxError):
    """A checkpoint directory is inconsistent, truncated, or tampered."""


class TrainingError(MtxError):
    """Training produced a non-finite loss or gradient and was aborted."""


class NumericError(MtxError):
    """A numeric routine received non-finite input or failed to converge."""
