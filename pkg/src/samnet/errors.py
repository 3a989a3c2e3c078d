"""Exception hierarchy shared across the package."""


class SamError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(SamError):
    """Operands with incompatible shapes reached a kernel."""


class TapeError(SamError):
    """A reverse pass was requested on an unusable tape."""


class ConfigError(SamError):
    """A configuration value violates a model or data invariant."""


class CorpusError(SamError):
    """A corpus file is malformed; carries line/column context."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)
        self.line = line
        self.column = column


class CheckpointError(SamError):
    """A checkpoint file cannot be read or does not match the model."""


class MemoryBudgetExceeded(SamError):
    """An instrumented allocation would exceed the configured budget."""


class TrainingDiverged(SamError):
    """Training produced a non-finite loss."""
