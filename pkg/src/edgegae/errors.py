"""Exception types shared across the package."""


class InvalidArgumentError(ValueError):
    """An argument violates a documented precondition."""


class CapacityError(RuntimeError):
    """A request exceeds what the exact solver can handle."""


class DatasetParseError(ValueError):
    """A dataset or instance file is malformed; carries the 1-based line number."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointFormatError(ValueError):
    """A checkpoint file is corrupt, truncated, or structurally unexpected."""


class UndefinedMetricError(ValueError):
    """A metric is undefined for the given inputs (e.g. single-class labels)."""
