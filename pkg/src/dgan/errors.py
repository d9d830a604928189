"""Exception hierarchy shared by all modules.

The CLI maps these onto exit codes, so every failure a user can trigger
should be raised as one of these rather than a bare ValueError.
"""


class DganError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(DganError):
    """Shapes do not line up for the requested operation."""

    def __init__(self, message, *shapes):
        if shapes:
            message = f"{message}: " + " vs ".join(str(tuple(s)) for s in shapes)
        super().__init__(message)


class ContractError(DganError):
    """A call violated an operation's precondition."""


class ValidationError(DganError):
    """A configuration value failed validation."""


class NumericError(DganError):
    """A numeric failure (NaN/Inf or a computation that lost too much precision)."""


class FormatError(DganError):
    """A serialized file is malformed."""
