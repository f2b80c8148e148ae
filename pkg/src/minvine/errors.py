"""Exception types raised across the package."""


class MinVineError(Exception):
    """Base class for all package errors."""


class DomainError(MinVineError, ValueError):
    """An argument lies outside the unit interval or square."""


class SolverFailure(MinVineError):
    """A basis construction system could not be satisfied to tolerance."""


class NonFiniteError(MinVineError, FloatingPointError):
    """A kernel evaluation produced a non-finite value."""


class ConvergenceFailure(MinVineError):
    """The D1AD2 iteration exhausted its sweep budget.

    Attributes
    ----------
    best : object
        The best iterate reached (a ``DiscretizedCopula``).
    error : float
        Marginal deviation of ``best``.
    """

    def __init__(self, message, best=None, error=float("nan")):
        super().__init__(message)
        self.best = best
        self.error = error


class InfeasibleMoments(MinVineError):
    """The moment residual stalled above tolerance."""

    def __init__(self, message, lambdas=None, residual=float("nan")):
        super().__init__(message)
        self.lambdas = lambdas
        self.residual = residual


class EmptyBin(MinVineError):
    """A bin combination holds too few observations to fit."""

    def __init__(self, message, edge=None, bin_index=None, count=0):
        super().__init__(message)
        self.edge = edge
        self.bin_index = bin_index
        self.count = count


class UnfittedParent(MinVineError):
    """A conditional edge was requested before its parent edges were fitted."""


class UnsupportedStructure(MinVineError):
    """The operation is only available for D-vine structures."""


class InvalidConfig(MinVineError, ValueError):
    """A configuration value is missing or out of range."""


class DataError(MinVineError, ValueError):
    """Base class for input data problems."""


class ParseError(DataError):
    """A CSV cell could not be parsed as a number."""


class NonFiniteValue(DataError):
    """A CSV cell parsed to NaN or infinity."""


class EmptyDataset(DataError):
    """The CSV file contains a header but no data rows."""
