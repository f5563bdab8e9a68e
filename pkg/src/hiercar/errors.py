"""Exception types shared across the package.

Input errors carry enough location information (file, row, column,
unit label) to point at the offending cell or record.
"""


class HiercarError(Exception):
    """Base class for all package errors."""


class InputError(HiercarError):
    """A problem with user-supplied input files or configuration."""

    def __init__(self, message, *, path=None, row=None, column=None):
        loc = []
        if path is not None:
            loc.append(str(path))
        if row is not None:
            loc.append(f"row {row}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.path = path
        self.row = row
        self.column = column


class MissingColumnError(InputError):
    """A required CSV column is absent."""


class CellParseError(InputError):
    """A cell could not be parsed as the expected type."""


class DanglingKeyError(InputError):
    """A record references an id that does not exist in the parent file."""


class EmptyUnitError(InputError):
    """A municipality without students, or a department without municipalities."""


class ZeroVarianceError(InputError):
    """A covariate column is constant and cannot be standardized."""


class CrossDepartmentEdgeError(InputError):
    """An adjacency edge joins municipalities of different departments."""


class RankDeficientError(HiercarError):
    """Design matrix is rank deficient in an OLS fit."""


class FactorizationError(HiercarError):
    """Cholesky factorization failed even after diagonal jitter escalation."""


class McmcError(HiercarError):
    """Sampler-level failure; carries the sweep index when available."""

    def __init__(self, message, sweep=None):
        if sweep is not None:
            message = f"{message} (sweep {sweep})"
        super().__init__(message)
        self.sweep = sweep
