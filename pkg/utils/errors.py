"""Error kinds raised across the recognizer."""
from typing import Optional


class LASError(Exception):
    """Root of every error the package raises on purpose."""


class InvalidArgumentError(LASError, ValueError):
    pass


class NumericDomainError(LASError, ArithmeticError):
    pass


class InsufficientSamplesError(InvalidArgumentError):
    pass


class AudioFormatError(LASError, ValueError):
    pass


class CheckpointFormatError(LASError, ValueError):
    pass


class UndefinedMetricError(LASError, ValueError):
    pass


class TrainingDivergedError(NumericDomainError):
    pass


class ArpaParseError(LASError, ValueError):
    def __init__(self, message: str, line_number: Optional[int] = None):
        self.line_number = line_number
        if line_number is not None:
            message = f"line {line_number}: {message}"
        super().__init__(message)


class ConfigError(LASError, ValueError):
    def __init__(self, message: str, key: Optional[str] = None, line_number: Optional[int] = None):
        self.key = key
        self.line_number = line_number
        where = []
        if key is not None:
            where.append(f"key '{key}'")
        if line_number is not None:
            where.append(f"line {line_number}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)
