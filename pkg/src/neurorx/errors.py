"""Exception types shared across the package."""


class ConfigurationError(ValueError):
    """Invalid configuration value; ``line`` is set when it came from a file."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NumericalFailure(RuntimeError):
    """A solver or training stage produced non-finite or singular results."""

    def __init__(self, message, stage=None):
        self.stage = stage
        if stage is not None:
            message = f"[{stage}] {message}"
        super().__init__(message)
