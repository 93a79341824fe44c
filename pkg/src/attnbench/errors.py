"""Exception hierarchy shared by every attnbench module."""


class AttnBenchError(Exception):
    """Base class for all errors raised by attnbench."""


class DimensionError(AttnBenchError, ValueError):
    """Operand shapes do not conform."""


class SequenceTooLongError(DimensionError):
    """A sequence exceeds a model's fixed number of positions."""


class MaskingError(AttnBenchError, ValueError):
    """A softmax slice is masked out entirely."""


class ConfigError(AttnBenchError, ValueError):
    """Inconsistent hyperparameters or model/data configuration."""


class VocabularyError(AttnBenchError, ValueError):
    """A token id lies outside the vocabulary."""


class EmptyLossError(AttnBenchError, ValueError):
    """Every target position was ignored, so the loss is undefined."""


class ContractError(AttnBenchError, RuntimeError):
    """An API precondition was violated by the caller."""


class DataError(AttnBenchError):
    """A corpus or dataset cannot satisfy the requested sampling."""


class CheckpointFormatError(AttnBenchError):
    """A checkpoint file is corrupt or has an unsupported version."""
