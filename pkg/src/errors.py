"""Exception families used across the pipeline, each tied to a CLI exit code."""

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


class AutoArError(Exception):
    """Base class for every error raised on purpose by the pipeline."""
    exit_code = 1


class ConfigError(AutoArError, ValueError):
    """Invalid configuration, flag or argument."""
    exit_code = EXIT_CONFIG


class DataError(AutoArError, ValueError):
    """Unreadable, malformed or unsuitable input data."""
    exit_code = EXIT_DATA


class InsufficientDataError(DataError):
    """The series is too short for the requested operation."""


class NumericalError(AutoArError, ArithmeticError):
    """A numerical routine failed even after stabilization."""
    exit_code = EXIT_NUMERICAL
