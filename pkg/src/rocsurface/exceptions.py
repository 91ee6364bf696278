"""Exception hierarchy shared across the package.

``RocSurfaceError`` is the base for every failure this library raises on
purpose; the CLI maps data/usage problems to exit code 2 and numerical
failures to exit code 3.
"""


class RocSurfaceError(Exception):
    """Base class for all errors raised by this package."""


class DataError(RocSurfaceError):
    """Malformed input data (parse or validation failure)."""


class EstimationError(RocSurfaceError):
    """Numerical failure during model fitting or estimation."""


class SeparationError(EstimationError):
    """Complete separation detected while fitting a working model.

    Raised when a linear predictor exceeds the configured bound during
    Newton iterations, i.e. fitted probabilities are numerically 0/1 and
    the maximum likelihood estimate does not exist.
    """


class NonConvergence(EstimationError):
    """Newton iterations exhausted without meeting the score tolerance.

    Carries the last iterate so callers may inspect (or knowingly reuse)
    the unconverged fit.
    """

    def __init__(self, message, fit=None):
        super().__init__(message)
        self.fit = fit


class DegenerateDenominator(EstimationError):
    """A class-weight denominator is numerically zero.

    ``class_index`` is the 1-based disease class whose pseudo-disease
    column summed to (numerically) zero.
    """

    def __init__(self, class_index, total):
        super().__init__(
            f"pseudo-disease weights for class {class_index} sum to {total:.3e}; "
            "the estimator is undefined"
        )
        self.class_index = class_index
        self.total = total


class DegenerateTheta(EstimationError):
    """A class-prevalence estimate is too close to zero for the delta method."""


class SingularBread(EstimationError):
    """The summed estimating-function Jacobian is numerically singular."""


class SingularCovariance(EstimationError):
    """A covariance matrix required to be positive definite is singular."""


class AllReplicatesFailed(EstimationError):
    """Every bootstrap replicate raised an estimation error."""
