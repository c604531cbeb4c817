"""Exception types shared across the package."""


class NumericalError(RuntimeError):
    """A linear-algebra operation failed in a way that invalidates the result.

    Raised when a covariance loses positive definiteness, an innovation
    matrix cannot be factorized, or a fusion system is singular. The message
    carries the step index where applicable.
    """
