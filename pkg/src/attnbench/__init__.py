"""Reference encoder-decoder attention models on a numpy autograd engine."""
from . import _kernels
from .errors import (
    AttnBenchError,
    CheckpointFormatError,
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    EmptyLossError,
    MaskingError,
    SequenceTooLongError,
    VocabularyError,
)
from .tensor import Tape, Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Tape", "backward", "no_grad", "AttnBenchError", "CheckpointFormatError",
    "ConfigError", "ContractError", "DataError", "DimensionError", "EmptyLossError",
    "MaskingError", "SequenceTooLongError", "VocabularyError", "__version__",
]
