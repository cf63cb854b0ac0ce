"""Exception types shared across the package.

ConfigError and DataError map to distinct command-line exit codes; numerical
failures (e.g. linalg.IndefiniteError, optimizer breakdown) get their own code
in the CLI layer.
"""


class ConfigError(Exception):
    """Invalid or inconsistent configuration; names the offending field."""


class DataError(Exception):
    """Invalid input data; names the offending column/row where possible."""


class NumericalError(Exception):
    """A numerical routine failed in a way no rescue policy could absorb."""
