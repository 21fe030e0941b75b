"""Exception types shared across the toolkit.

Every error carries a short machine-readable ``code`` (stable, asserted on
in tests) plus a human-readable message.  The CLI maps each class to one
process exit code.
"""


class ToolkitError(Exception):
    """Base class for all toolkit failures."""

    exit_code = 1

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
        self.message = message


class ConfigError(ToolkitError):
    """Invalid experiment configuration (exit code 2)."""

    exit_code = 2


class DataError(ToolkitError):
    """Malformed or insufficient input data (exit code 3)."""

    exit_code = 3


class NumericError(ToolkitError):
    """Non-finite or degenerate numeric state (exit code 4)."""

    exit_code = 4


class StorageError(ToolkitError):
    """Corrupt or inconsistent on-disk artifacts (exit code 5)."""

    exit_code = 5
