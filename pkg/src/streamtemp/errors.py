"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: UsageError -> 1, DataError -> 2,
NumericError -> 3.
"""


class StreamTempError(Exception):
    """Base class for all package errors."""


class UsageError(StreamTempError):
    """Bad command-line arguments or malformed configuration."""


class DataError(StreamTempError):
    """Invalid or inconsistent input data (CSV schemas, masks, plans)."""


class NumericError(StreamTempError):
    """Numeric failure (NaN/Inf) during a forward or backward pass."""

    def __init__(self, op: str, detail: str = ""):
        self.op = op
        msg = f"numeric failure in op '{op}'"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)
