"""Known input distributions p_x with log-density, sampler and per-dimension quantiles."""
import numpy as np
from scipy import stats

from .errors import DimensionError


class InputDistribution:
    """Product distribution over independent coordinates.

    Subclasses provide ``marginals``: one frozen ``scipy.stats`` distribution
    per dimension.
    """

    kind = "product"
    marginals = ()

    @property
    def dim(self):
        return len(self.marginals)

    def _check(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dim:
            raise DimensionError(f"expected {self.dim}-dimensional inputs, got {X.shape[1]}")
        return X

    def logpdf(self, X):
        X = self._check(X)
        out = np.zeros(X.shape[0])
        for k, marg in enumerate(self.marginals):
            out += marg.logpdf(X[:, k])
        return out

    def sample(self, n, rng):
        rng = np.random.default_rng(rng)
        return self.ppf(rng.random((n, self.dim)))

    def ppf(self, U):
        """Map points of the unit cube through each marginal quantile function."""
        U = self._check(U)
        return np.column_stack([marg.ppf(U[:, k]) for k, marg in enumerate(self.marginals)])

    def box(self, n_std=6.0):
        """Axis-aligned box holding the bulk of the mass (mean +- n_std std, clipped to support)."""
        out = []
        for marg in self.marginals:
            lo, hi = marg.support()
            m, s = marg.mean(), marg.std()
            out.append((max(lo, m - n_std * s), min(hi, m + n_std * s)))
        return np.array(out)

    def describe(self):
        return {"kind": self.kind}


class StandardNormal(InputDistribution):
    kind = "StandardNormal"

    def __init__(self, d):
        self.d = int(d)
        self.marginals = tuple(stats.norm() for _ in range(self.d))

    def logpdf(self, X):
        X = self._check(X)
        return -0.5 * np.sum(X * X, axis=1) - 0.5 * self.d * np.log(2 * np.pi)

    def describe(self):
        return {"kind": self.kind, "d": self.d}


class IndependentNormal(InputDistribution):
    kind = "IndependentNormal"

    def __init__(self, means, stds):
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)
        if self.means.shape != self.stds.shape or np.any(self.stds <= 0):
            raise ValueError("means and positive stds must have the same length")
        self.marginals = tuple(stats.norm(m, s) for m, s in zip(self.means, self.stds))

    def describe(self):
        return {"kind": self.kind, "means": self.means.tolist(), "stds": self.stds.tolist()}


class TruncatedNormal(InputDistribution):
    """Independent normals, each restricted to ``[lower_k, upper_k]`` and renormalized."""

    kind = "TruncatedNormal"

    def __init__(self, means, stds, lower=None, upper=None):
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)
        d = self.means.size
        self.lower = np.full(d, -np.inf) if lower is None else np.asarray(lower, dtype=float)
        self.upper = np.full(d, np.inf) if upper is None else np.asarray(upper, dtype=float)
        if np.any(self.upper <= self.lower):
            raise ValueError("truncation bounds are empty")
        self.marginals = tuple(
            stats.truncnorm((lo - m) / s, (hi - m) / s, loc=m, scale=s)
            for m, s, lo, hi in zip(self.means, self.stds, self.lower, self.upper)
        )

    def describe(self):
        return {"kind": self.kind, "means": self.means.tolist(), "stds": self.stds.tolist(),
                "lower": self.lower.tolist(), "upper": self.upper.tolist()}


def HalfPlaneTruncatedNormal(means, stds, dim, upper, positive=()):
    """Normal inputs cut at ``x[dim] <= upper``; dims in ``positive`` are kept above zero."""
    d = len(means)
    lo = np.full(d, -np.inf)
    hi = np.full(d, np.inf)
    hi[dim] = upper
    for k in positive:
        lo[k] = 0.0
    return TruncatedNormal(means, stds, lo, hi)


class Uniform(InputDistribution):
    kind = "Uniform"

    def __init__(self, lows, highs):
        self.lows = np.asarray(lows, dtype=float)
        self.highs = np.asarray(highs, dtype=float)
        self.marginals = tuple(stats.uniform(lo, hi - lo) for lo, hi in zip(self.lows, self.highs))

    def describe(self):
        return {"kind": self.kind, "lows": self.lows.tolist(), "highs": self.highs.tolist()}
