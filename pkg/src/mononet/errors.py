"""Exception hierarchy shared across the package."""


class MonoNetError(Exception):
    """Base class for all package errors."""


class ContractError(MonoNetError, ValueError):
    """A documented precondition was violated by the caller."""


class DimensionError(MonoNetError, ValueError):
    """Operand shapes are incompatible."""


class NonFiniteError(MonoNetError, FloatingPointError):
    """An operation produced NaN or Inf from finite inputs."""


class SpecError(MonoNetError, ValueError):
    """A layer stack does not describe a valid architecture."""

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message if index is None else f"layer {index}: {message}")
        self.index = index


class FormatError(MonoNetError, ValueError):
    """A serialized model or data file is malformed."""


class UnsupportedVersionError(FormatError):
    """A serialized model uses a format version this build cannot read."""


class ParseError(MonoNetError, ValueError):
    """A text data file could not be parsed."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DataError(MonoNetError, ValueError):
    """Data values are out of the accepted domain."""


class StratificationError(DataError):
    """A class has too few samples for a stratified split."""


class DivergedTrainingError(MonoNetError, FloatingPointError):
    """Loss became NaN or Inf during training."""

    def __init__(self, epoch: int, batch: int):
        super().__init__(f"training diverged at epoch {epoch}, batch {batch}")
        self.epoch = epoch
        self.batch = batch


class UndefinedCorrelationError(MonoNetError, ValueError):
    """Correlation requested for a vector with zero rank variance."""
