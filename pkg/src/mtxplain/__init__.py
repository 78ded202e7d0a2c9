"""Multitask explainable text classification on a small numpy autodiff core."""

__version__ = "0.1.0"

from .errors import (
    MtxError,
    ShapeError,
    ConfigError,
    DataError,
    FormatError,
    DictionaryError,
    StratificationError,
    CheckpointError,
    TrainingError,
    NumericError,
)
from .tensor import Tensor, gradcheck, svd_small

__all__ = [
    "MtxError",
    "ShapeError",
    "ConfigError",
    "DataError",
    "FormatError",
    "DictionaryError",
    "StratificationError",
    "CheckpointError",
    "TrainingError",
    "NumericError",
    "Tensor",
    "gradcheck",
    "svd_small",
    "__version__",
]
