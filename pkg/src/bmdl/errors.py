"""Exception hierarchy shared by every module in the package."""


class BMDLError(Exception):
    """Base class for all errors raised by :mod:`bmdl`."""


class OutOfRange(BMDLError, ValueError):
    """A changepoint or metadata time lies outside ``p+1..N``."""


class Duplicate(BMDLError, ValueError):
    """A time is repeated within one component."""


class DimensionMismatch(BMDLError, ValueError):
    pass


class DegenerateDesign(BMDLError, ArithmeticError):
    """The mean design ``[A|D]`` is rank deficient (e.g. an empty regime)."""


class SingularMatrix(BMDLError, ArithmeticError):
    """A linear system needed for estimation is singular or ill-conditioned."""


class EmptyModel(BMDLError, ValueError):
    """An operation requiring at least one changepoint got ``m = 0``."""


class NoSwapPossible(BMDLError):
    """A swap move was requested on a configuration that admits none."""


class NonStationary(BMDLError, ValueError):
    """AR/VAR parameters are not causal (companion spectral radius >= 1)."""


class ParseError(BMDLError, ValueError):
    pass


class GapError(BMDLError, ValueError):
    """Consecutive rows of a station record skip one or more months."""


class RangeError(BMDLError, ValueError):
    """A metadata time maps outside the admissible changepoint window."""


class SearchFailed(BMDLError, RuntimeError):
    """Every chain of a search aborted; no configuration was scored."""
