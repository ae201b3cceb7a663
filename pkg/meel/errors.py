# meel/errors.py
from __future__ import annotations


class MeelError(Exception):
    """Base class for every error raised by the meel package."""


class DegenerateInputError(MeelError, ValueError):
    pass


class ShapeMismatchError(MeelError, ValueError):
    pass


class InvalidArgumentError(MeelError, ValueError):
    pass


class NonFiniteLossError(MeelError, ValueError):
    pass


class ConfigError(MeelError, ValueError):
    """A configuration value is invalid. `field` names the offending key (dotted path)."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field
        self.message = message


# ---- feature files ----------------------------------------------------------
class FeatureFormatError(MeelError, ValueError):
    pass


class TruncatedFileError(FeatureFormatError):
    def __init__(self, path: str, expected: int, actual: int):
        super().__init__(
            f"{path}: truncated feature file, expected {expected} bytes, got {actual} bytes"
        )
        self.expected = expected
        self.actual = actual


class CheckpointFormatError(MeelError, ValueError):
    pass


# ---- dataset validation -----------------------------------------------------
class DatasetValidationError(MeelError, ValueError):
    pass


class DanglingOwnerError(DatasetValidationError):
    pass


class OverlappingSplitsError(DatasetValidationError):
    pass


class CountMismatchError(DatasetValidationError):
    pass


class EmptyCaptionSetError(DatasetValidationError):
    pass


class EmptySplitError(DatasetValidationError):
    pass
