"""Exceptions raised by the extraction toolkit.

Every error names the stage it came from so the CLI can report provenance and
map the failure onto a stable exit code.
"""

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_USAGE = 2
EXIT_NUMERICAL = 3


class BseError(Exception):
    exit_code = EXIT_UNEXPECTED

    def __init__(self, message, stage="unknown"):
        super().__init__(message)
        self.stage = stage

    def __str__(self):
        return f"[{self.stage}] {super().__str__()}"


class InputError(BseError):
    """Bad user data: wrong channel count, empty signal, mismatched lengths."""

    exit_code = EXIT_USAGE


class ConfigError(BseError):
    exit_code = EXIT_USAGE


class NumericalError(BseError):
    """Singular or non positive-definite matrices, degenerate ranks."""

    exit_code = EXIT_NUMERICAL
