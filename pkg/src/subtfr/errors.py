"""Exception hierarchy shared across the package."""


class SubtfrError(Exception):
    """Base class for all errors raised by this package."""


class DataError(SubtfrError):
    """Malformed or inconsistent input data (bad file, broken invariant)."""


class NumericError(SubtfrError):
    """A numeric procedure failed (out-of-range moments, PD repair failure)."""
