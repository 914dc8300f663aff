"""Exception hierarchy.

Input problems derive from :class:`InputError`, numerical breakdowns from
:class:`NumericalError`; the command line maps them to exit codes 1 and 2.
"""


class GridJoinError(Exception):
    """Base class for all package errors."""


class InputError(GridJoinError, ValueError):
    """Bad arguments, missing files or malformed file contents."""


class GridFormatError(InputError):
    """A grid file could not be decoded."""


class HeaderError(GridFormatError):
    """Bad magic or unreadable header."""


class LayoutValidationError(GridFormatError):
    """Header decoded but the layout violates its invariants."""


class SizeMismatchError(GridFormatError):
    """Payload length does not match width * height."""


class NonFiniteError(GridFormatError):
    """NaN or infinity in grid values."""


class DatasetFormatError(InputError):
    """A dataset file is malformed or has the wrong version."""


class NumericalError(GridJoinError, ArithmeticError):
    """The optimization cannot proceed."""


class SolvabilityError(NumericalError):
    """No global cell is observed by any submap."""


class DegenerateGeometryError(NumericalError):
    """The reduced pose system is singular."""

    def __init__(self, message, smallest_eigenvalue=None):
        super().__init__(message)
        self.smallest_eigenvalue = smallest_eigenvalue


class DivergenceError(NumericalError):
    """Objective increased repeatedly or became non-finite.

    ``report`` holds the iteration history up to the abort when available.
    """

    def __init__(self, message: str, report=None):
        super().__init__(message)
        self.report = report


class MemoryGuardError(NumericalError):
    """A dense oracle was requested on an instance that is too large."""
