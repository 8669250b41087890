"""Exception types raised across the package."""


class NotPositiveDefinite(ValueError):
    """A matrix expected to be Hermitian positive definite is not."""


class SingularCore(ArithmeticError):
    """The dense capacitance matrix of a low-rank update is singular."""


class MaxIterations(RuntimeError):
    """An iterative solver did not reach its tolerance."""

    def __init__(self, message, iterations=None, relres=None):
        super().__init__(message)
        self.iterations = iterations
        self.relres = relres


class BreakdownNonpositiveCurvature(ArithmeticError):
    """CG met a search direction with p^H A p <= 0."""


class InsufficientData(ValueError):
    """Not enough Lanczos data to estimate extreme eigenvalues."""


class NonHermitian(ValueError):
    """An assembled operator failed the Hermitian check."""


class EmptyRegion(ValueError):
    """An oversampled region has no interior degrees of freedom."""


class TooLargeForOracle(ValueError):
    """A dense oracle was requested for a problem above the dof cap."""


class StageError(RuntimeError):
    """Wraps an error raised by one stage of an experiment run."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
