"""Exception hierarchy shared by all modules."""


class RareLWError(Exception):
    """Base class for every error raised by this package."""


class DimensionError(RareLWError, ValueError):
    pass


class NonFiniteInputError(RareLWError, ValueError):
    pass


class SingularCovarianceError(RareLWError):
    """Cholesky factorization failed even at the largest jitter.

    ``rows`` holds the indices of the closest pair of inputs, the usual
    culprit in the noise-free setting.
    """

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = rows


class DuplicatePointError(RareLWError):
    """A point whose posterior variance is already below the floor."""


class NumericalDegradationError(RareLWError):
    """An incremental update produced a clearly negative variance."""


class MemoryBudgetError(RareLWError):
    pass


class FitError(RareLWError):
    """All hyperparameter restarts failed; ``best`` is the best config seen, if any."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class DensityError(RareLWError, ValueError):
    pass


class StalenessError(RareLWError):
    """Scores requested from a cache and a density built from different surrogates."""


class PoolExhaustedError(RareLWError):
    pass


class DivergenceError(RareLWError):
    def __init__(self, message, x=None):
        super().__init__(message)
        self.x = x


class ConfigError(RareLWError, ValueError):
    pass
