"""Exception types raised across the package."""


class MoscoError(Exception):
    """Base class for all package errors."""


class DimensionMismatchError(MoscoError, ValueError):
    """Two objects live in incompatible truncations of the Hilbert space."""


class InvariantError(MoscoError, ValueError):
    """A constructor argument violates a documented invariant."""


class SingularOperatorError(MoscoError, ArithmeticError):
    """A linear solve was requested against a (numerically) singular operator."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class DomainError(MoscoError, ValueError):
    """A point lies outside the effective domain of a functional."""


class ConvergenceError(MoscoError, RuntimeError):
    """An iterative routine stopped before reaching its tolerance."""

    def __init__(self, message, residual=None, iterations=None):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConjugateBoundaryError(MoscoError, RuntimeError):
    """The maximiser of a conjugate evaluation sits on the search boundary.

    The supremum may be unattained (possibly ``+inf``); ``value`` holds the
    bounded maximum that was found.
    """

    def __init__(self, message, value=None, maximizer=None):
        super().__init__(message)
        self.value = value
        self.maximizer = maximizer


class NotASubgradientError(MoscoError, ValueError):
    """A supplied vector fails the subgradient inequality."""


class InstabilityError(MoscoError, RuntimeError):
    """Difference quotients fail to settle along a step schedule."""


class FitFailedError(MoscoError, RuntimeError):
    """A constrained fit inside a test statistic did not converge."""

    def __init__(self, message, results=()):
        super().__init__(message)
        self.results = tuple(results)


class UnsupportedSetError(MoscoError, NotImplementedError):
    """A constraint set cannot be represented as a tangent cone."""
