"""Exception types shared across the package."""


class LcnetError(Exception):
    """Base class for all lcnet errors."""


class ParseError(LcnetError):
    """Malformed input file. Carries the 1-based line number when known."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DataError(LcnetError):
    """Inconsistent or insufficient mortality data."""


class ConvergenceError(LcnetError):
    """Iterative solver failed to converge. Carries the last iterate."""

    def __init__(self, message, factors=None, residual=None):
        super().__init__(message)
        self.factors = factors
        self.residual = residual


class TrainingDivergedError(LcnetError):
    """Non-finite loss during network training. Carries the epoch index."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class ConfigError(LcnetError):
    """Invalid experiment or model configuration."""
