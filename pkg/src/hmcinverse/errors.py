"""Exception and warning types shared across the package."""


class InvalidInputError(ValueError):
    """Raised for malformed numeric input (non-finite entries, bad shapes, bad ranges)."""


class SingularMatrixError(ValueError):
    """Raised when a factor that must be invertible is (numerically) singular."""


class NotPositiveDefiniteError(ValueError):
    """Raised when a covariance cannot be Cholesky-factorized within the jitter budget."""

    def __init__(self, message, min_eigenvalue=None):
        super().__init__(message)
        self.min_eigenvalue = min_eigenvalue


class RankDeficiencyError(ValueError):
    """Raised when too few samples are available to form a full-rank covariance."""


class DegenerateDimensionError(ValueError):
    """Raised when a dimension has zero sample variance."""

    def __init__(self, message, dimension=None):
        super().__init__(message)
        self.dimension = dimension


class InvalidOversamplingError(ValueError):
    """Raised when an oversampling ratio S/N is not strictly greater than one."""


class ConditioningError(ValueError):
    """Raised when a normal-equation matrix is too ill-conditioned to invert."""


class SingularTransformError(ValueError):
    """Raised when a transform's Jacobian is singular at the evaluation point."""


class UnphysicalVelocityError(ValueError):
    """Raised when a velocity reaches the Doppler-factor pole (V >= 1)."""


class ScheduleTooSparseError(ValueError):
    """Raised when an annealing schedule has edges that almost never swap."""


class NoMixingRungError(RuntimeError):
    """Raised when no rung of a burn-in ladder mixes without swaps."""


class ConfigError(ValueError):
    """Raised for invalid experiment configuration; ``key`` names the offending entry."""

    def __init__(self, message, key=None):
        super().__init__(message)
        self.key = key


class AdaptationWarning(RuntimeWarning):
    """Step-size adaptation did not reach the acceptance band.

    The adaptation trace (list of ``(step_size, mean_accept)``) is attached as ``trace``.
    """

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace if trace is not None else []


class StepSizeTooLargeWarning(RuntimeWarning):
    """Most self-terminating trajectories stopped at the first doubling."""


class DegenerateChainsWarning(RuntimeWarning):
    """Some dimensions have (near) zero variance; diagnostics for them are flagged."""


class PreconditionerFallbackWarning(RuntimeWarning):
    """Full-covariance preconditioning was not possible; a diagonal factor is used instead."""
