"""Exception types shared across the library."""


class NumericalError(RuntimeError):
    """A linear-algebra operation failed beyond recoverable jitter."""


class CavityError(RuntimeError):
    """Removing a site fraction produced an improper cavity distribution."""


class SiteUpdateError(RuntimeError):
    """A proposed site update was invalid (zero/non-finite precision)."""


class StateError(RuntimeError):
    """The posterior state is inconsistent with the requested operation."""


class DegeneracyError(RuntimeError):
    """The posterior carries no site information (R = 0), so no surrogate
    regression problem can reproduce it."""


class DataError(ValueError):
    """Malformed input data (ragged rows, non-numeric cells, ...)."""
