"""Exception hierarchy shared by the library and the CLI.

Each class carries the process exit code the CLI maps it to.
"""


class CollabSparseError(Exception):
    exit_code = 1


class ConfigError(CollabSparseError, ValueError):
    """Invalid parameters, variant combinations or config files."""

    exit_code = 2


class DimensionError(ConfigError):
    """Shape mismatch between dictionaries, observations or blocks."""


class NumericalError(CollabSparseError, ArithmeticError):
    """A numeric routine failed (non-finite iterate, SVD failure, ...)."""

    exit_code = 3

    def __init__(self, message, iteration=None):
        super().__init__(message)
        self.iteration = iteration


class DatasetIOError(CollabSparseError, OSError):
    exit_code = 4
