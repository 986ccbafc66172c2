"""
Exception hierarchy for the zero-shot learning components
"""


class ZSLError(Exception):
    """Base class for every error raised by the library."""


class ValidationError(ZSLError):
    """An input violates a documented invariant or precondition."""


class ShapeError(ValidationError):
    """Array shapes do not line up."""


class DataFormatError(ZSLError):
    """
    A CSV input could not be parsed

    Args:
        message (str): What went wrong
        path (str, optional): File being parsed
        line (int, optional): 1-based line number of the offending row
    """

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class NonFiniteError(ZSLError):
    """A NaN or infinity showed up where finite numbers are required."""

    def __init__(self, message, block=None):
        self.block = block
        super().__init__(message)


class ConvergenceError(ZSLError):
    """An iterative solver hit its iteration cap."""

    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ConfigError(ZSLError):
    """An experiment configuration key is unknown, malformed or out of range."""

    def __init__(self, message, key=None):
        self.key = key
        prefix = f"{key}: " if key else ""
        super().__init__(f"{prefix}{message}")


class StageError(ZSLError):
    """A pipeline stage failed; wraps the underlying cause."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
