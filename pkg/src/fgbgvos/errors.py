"""Exception types shared across the package.

The CLI maps these onto exit codes: usage/config errors exit 1, data
errors exit 2, numeric failures exit 3.
"""


class InvalidInputError(ValueError):
    """An operation received arguments violating its preconditions."""


class InvalidConfigError(ValueError):
    """A configuration value is out of range or unknown."""


class DataError(RuntimeError):
    """A dataset directory or file is missing or malformed."""


class NumericError(RuntimeError):
    """A numeric invariant broke at runtime (non-finite loss etc.)."""
