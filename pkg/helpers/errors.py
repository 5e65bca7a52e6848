"""Exceptions raised by the vowel graph attention helpers."""


class VganError(Exception):
    """Base class, carries the process exit code."""

    exit_code = 2


class UsageError(VganError):
    """Command line misuse."""

    exit_code = 1


class DataError(VganError):
    """Bad input data, bad config or broken artifacts."""

    exit_code = 2


class ConfigError(DataError):
    """Invalid configuration value or unknown key."""


class ParseError(DataError):
    """Unparseable document."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class FormatError(DataError):
    """Unsupported or truncated binary format."""


class ValidationError(DataError):
    """Structurally valid data violating an invariant."""


class RangeError(DataError):
    """Value outside its allowed domain."""


class LoadError(DataError):
    """Model document does not match its declared format."""


class InputError(DataError):
    """Missing or inconsistent network input."""


class MissingVowelError(DataError):
    """A vowel required by a formula is absent."""


class EmptyCategoryError(DataError):
    """One or more vowel categories have no observation."""


class BandError(DataError):
    """A severity band has nothing to sample from."""


class NumericError(VganError):
    """Numeric failure."""

    exit_code = 3


class MeasurementError(NumericError):
    """An acoustic or visual measurement could not be made."""


class UnvoicedError(MeasurementError):
    """No voiced frame in the segment."""


class InsufficientDataError(MeasurementError):
    """Too few periods, frames or samples."""


class FormantFailureError(MeasurementError):
    """No frame produced three formant candidates."""


class DegenerateFormantsError(MeasurementError):
    """Formant ratio with a zero denominator."""


class GeometryError(MeasurementError):
    """Zero-length vector in lip geometry."""


class UndefinedMetricError(NumericError):
    """Metric undefined for the given data (constant targets)."""
