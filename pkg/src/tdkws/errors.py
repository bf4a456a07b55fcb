"""Exception types shared across the package."""


class KwsError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(KwsError):
    """Invalid configuration value (sample rate, filter count, ...)."""


class InputError(KwsError):
    """Malformed runtime input: wrong dimension, non-finite values."""


class InsufficientDataError(KwsError):
    """Not enough data to perform the requested operation."""


class ModelFormatError(KwsError):
    """Base class for model file problems."""


class BadMagicError(ModelFormatError):
    """File does not start with the expected magic bytes."""


class FormatVersionError(ModelFormatError):
    """File declares an unsupported format version."""


class TruncatedPayloadError(ModelFormatError):
    """Weight payload is shorter (or longer) than the header declares."""


class DimensionMismatchError(ModelFormatError):
    """Declared layer dimensions do not chain into a valid network."""


class DivergenceError(KwsError):
    """Training produced a non-finite loss."""


class UndefinedRateError(KwsError):
    """A per-hour rate was requested for zero-duration audio."""


class UndefinedSnrError(KwsError):
    """SNR is undefined because the clean signal has zero power."""


class CounterDisabledError(KwsError):
    """A measured cost report was requested but instrumentation is off."""
