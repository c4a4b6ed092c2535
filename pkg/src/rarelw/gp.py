"""Noise-free Gaussian process regression with an incremental pool cache.

The surrogate is a zero-mean GP with an RBF or closed-form Matérn kernel.
Besides the usual fit / factorize / predict path, this module keeps a
``PoolPredictionCache``: the cross-covariance between a fixed candidate
set and the training inputs, plus the current predictive means and
variances on that set.  ``recursive_append`` folds one new observation
into those quantities in O(n_mc * n) by solving the small system
``K(X, X)^-1 k(X, x_new)`` first and only then touching the n_mc rows.
"""
import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.optimize import minimize

from . import _backend
from .errors import (
    DimensionError,
    DuplicatePointError,
    FitError,
    MemoryBudgetError,
    NonFiniteInputError,
    NumericalDegradationError,
    SingularCovarianceError,
)

logger = logging.getLogger(__name__)

FAMILIES = ("RBF", "Matern")
MATERN_ORDERS = (0.5, 1.5, 2.5)

JITTER_START = 1e-10
JITTER_MAX = 1e-4
DUPLICATE_FLOOR = 1e-8
NEGATIVE_VARIANCE_TOL = 1e-8
DEFAULT_MEMORY_BUDGET = 4 * 2**30

_PREDICT_CHUNK = 65536
_versions = itertools.count(1)


def _family_code(family, nu):
    if family == "RBF":
        return 0
    return 1 + MATERN_ORDERS.index(nu)


@dataclass(frozen=True)
class KernelConfig:
    """Stationary kernel ``k(x, x') = amplitude**2 * rho(dist(x, x'))``.

    ``dist`` is the Euclidean distance after dividing each coordinate by its
    lengthscale (so the diagonal scaling matrix holds squared lengthscales).
    """

    family: str
    amplitude: float
    lengthscales: tuple
    nu: float = 1.5

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}; expected one of {FAMILIES}")
        ls = tuple(float(v) for v in np.atleast_1d(self.lengthscales))
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "amplitude", float(self.amplitude))
        object.__setattr__(self, "nu", float(self.nu))
        if not (np.isfinite(self.amplitude) and self.amplitude > 0):
            raise ValueError("amplitude must be positive and finite")
        if not ls or not all(np.isfinite(v) and v > 0 for v in ls):
            raise ValueError("lengthscales must be positive and finite")
        if self.family == "Matern" and self.nu not in MATERN_ORDERS:
            raise ValueError(f"Matern smoothness must be one of {MATERN_ORDERS}, got {self.nu}")

    @property
    def dim(self):
        return len(self.lengthscales)

    @property
    def variance(self):
        return self.amplitude**2

    @property
    def inv_lengthscales(self):
        return 1.0 / np.asarray(self.lengthscales)

    @property
    def code(self):
        return _family_code(self.family, self.nu)

    def replace(self, **changes):
        values = dict(family=self.family, amplitude=self.amplitude,
                      lengthscales=self.lengthscales, nu=self.nu)
        values.update(changes)
        return KernelConfig(**values)

    def matrix(self, A, B=None):
        """Covariance matrix between the rows of ``A`` and ``B`` (``B`` defaults to ``A``)."""
        A = _as_points(A, self.dim)
        B = A if B is None else _as_points(B, self.dim)
        return _backend.call("cross_cov", A, B, self.inv_lengthscales, self.variance, self.code)


def _as_points(X, d=None):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=np.float64)))
    if d is not None and X.shape[1] != d:
        raise DimensionError(f"expected points of dimension {d}, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInputError("inputs contain NaN or infinity")
    return X


def kernel_eval(kernel, x, x_prime):
    x = np.asarray(x, dtype=np.float64).ravel()
    x_prime = np.asarray(x_prime, dtype=np.float64).ravel()
    if x.shape != (kernel.dim,) or x_prime.shape != (kernel.dim,):
        raise DimensionError(
            f"kernel has dimension {kernel.dim}; got points of shape {x.shape} and {x_prime.shape}")
    return float(kernel.matrix(x[None, :], x_prime[None, :])[0, 0])


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, 1) if X.size else X.reshape(0, 0)
        y = np.asarray(self.y, dtype=np.float64).ravel()
        if X.shape[0] != y.shape[0]:
            raise DimensionError(f"{X.shape[0]} inputs but {y.shape[0]} responses")
        if X.shape[0] > 1:
            _, first, counts = np.unique(X, axis=0, return_index=True, return_counts=True)
            if np.any(counts > 1):
                row = X[first[np.argmax(counts > 1)]]
                dup = np.nonzero((X == row).all(axis=1))[0]
                raise DuplicatePointError(f"dataset rows {dup.tolist()} are identical")
        object.__setattr__(self, "X", np.ascontiguousarray(X))
        object.__setattr__(self, "y", y)

    @classmethod
    def empty(cls, d):
        return cls(np.empty((0, d)), np.empty(0))

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    def append(self, x, y):
        x = np.asarray(x, dtype=np.float64).reshape(1, -1)
        return Dataset(np.vstack([self.X, x]), np.append(self.y, float(y)))


def _closest_pair(X, kernel):
    if X.shape[0] < 2:
        return None
    Z = X * kernel.inv_lengthscales
    d2 = np.sum((Z[:, None, :] - Z[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    i, j = np.unravel_index(np.argmin(d2), d2.shape)
    return (int(min(i, j)), int(max(i, j)))


def _factorize(K, variance, X=None, kernel=None, jitter_start=JITTER_START):
    """Cholesky of ``K + jitter*I``, escalating the jitter by 10x on failure."""
    rel = jitter_start
    eye = np.eye(K.shape[0])
    while rel <= JITTER_MAX * (1 + 1e-9):
        jitter = rel * variance
        try:
            return np.linalg.cholesky(K + jitter * eye), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    rows = _closest_pair(X, kernel) if X is not None else None
    raise SingularCovarianceError(
        f"covariance not positive definite even with jitter {JITTER_MAX:g}*tau^2; "
        f"closest input rows: {rows}", rows=rows)


@dataclass(frozen=True)
class PosteriorState:
    """Factorized GP posterior on a dataset.

    ``chol`` is the lower Cholesky factor of ``K(X, X) + jitter*I`` and
    ``alpha_vec`` solves ``(K + jitter*I) alpha = y``.  ``version`` changes
    whenever a new state is produced, which lets caches and densities
    detect that they were built from a different surrogate.
    """

    kernel: KernelConfig
    dataset: Dataset
    chol: np.ndarray
    alpha_vec: np.ndarray
    jitter: float
    version: int = field(default_factory=lambda: next(_versions))

    @property
    def n(self):
        return self.dataset.n

    def predict(self, Q):
        return predict_batch(self, Q)


def build_posterior(dataset, kernel, jitter_start=JITTER_START):
    if dataset.n and dataset.d != kernel.dim:
        raise DimensionError(f"dataset dimension {dataset.d} != kernel dimension {kernel.dim}")
    if dataset.n == 0:
        return PosteriorState(kernel, Dataset.empty(kernel.dim), np.empty((0, 0)), np.empty(0),
                              jitter_start * kernel.variance)
    X = _as_points(dataset.X, kernel.dim)
    K = kernel.matrix(X)
    L, jitter = _factorize(K, kernel.variance, X, kernel, jitter_start)
    alpha = cho_solve((L, True), dataset.y)
    return PosteriorState(kernel, dataset, L, alpha, jitter)


def _clamp_variance(var, kernel, jitter):
    tol = NEGATIVE_VARIANCE_TOL * kernel.variance
    lowest = var.min(initial=0.0)
    if lowest < -tol:
        raise NumericalDegradationError(
            f"predicted variance {lowest:.3e} is below -{tol:.1e}; rebuild the posterior")
    return np.clip(var, 0.0, kernel.variance + jitter, out=var)


def _predict_rows(state, Q, cross=None):
    kernel = state.kernel
    if cross is None:
        cross = kernel.matrix(Q, state.dataset.X) if state.n else np.empty((Q.shape[0], 0))
    if state.n == 0:
        return np.zeros(Q.shape[0]), np.full(Q.shape[0], kernel.variance), cross
    means = cross @ state.alpha_vec
    V = solve_triangular(state.chol, cross.T, lower=True, check_finite=False)
    var = kernel.variance - np.einsum("ij,ij->j", V, V)
    return means, var, cross


def predict_batch(state, Q):
    """Posterior means and variances at the rows of ``Q``.

    Variances in ``[-1e-8*tau^2, 0)`` are clamped to zero; anything more
    negative raises ``NumericalDegradationError``.
    """
    Q = _as_points(Q, state.kernel.dim)
    means = np.empty(Q.shape[0])
    var = np.empty(Q.shape[0])
    for start in range(0, Q.shape[0], _PREDICT_CHUNK):
        sl = slice(start, start + _PREDICT_CHUNK)
        means[sl], var[sl], _ = _predict_rows(state, Q[sl])
    return means, _clamp_variance(var, state.kernel, state.jitter)


class PoolPredictionCache:
    """Cross-covariance and predictive moments on a fixed set of points.

    Columns of the cross-covariance live in a preallocated buffer so an
    append writes one column instead of copying the whole matrix.
    """

    def __init__(self, points, cross, n, means, variances, state_version, memory_budget,
                 prior_variance=1.0):
        self.points = points
        self._cross = cross
        self.n = n
        self.means = means
        self.variances = variances
        self.state_version = state_version
        self.memory_budget = memory_budget
        self.prior_variance = prior_variance

    @property
    def n_points(self):
        return self.points.shape[0]

    @property
    def capacity(self):
        return self._cross.shape[1]

    @property
    def cross_cov(self):
        return self._cross[:, : self.n]

    @property
    def std(self):
        return np.sqrt(self.variances)

    def _reserve(self, columns):
        if columns <= self.capacity:
            return
        new_cap = max(columns, 2 * self.capacity, 16)
        _check_budget(self.n_points, new_cap, self.memory_budget)
        grown = np.empty((self.n_points, new_cap))
        grown[:, : self.n] = self._cross[:, : self.n]
        self._cross = grown

    def copy(self):
        other = PoolPredictionCache(self.points, self._cross.copy(), self.n, self.means.copy(),
                                    self.variances.copy(), self.state_version, self.memory_budget,
                                    self.prior_variance)
        return other


def _check_budget(n_points, n_max, budget):
    need = 8 * n_points * n_max
    if budget is not None and need > budget:
        raise MemoryBudgetError(
            f"pool cache needs {need / 2**20:.1f} MiB for {n_points} points x {n_max} samples, "
            f"budget is {budget / 2**20:.1f} MiB")


def init_pool_cache(state, pool, n_max=None, memory_budget=DEFAULT_MEMORY_BUDGET):
    """Cache predictions of ``state`` on ``pool``.

    ``pool`` is a ``CandidatePool`` or an array of points.  ``n_max`` is the
    largest dataset size the cache will grow to; it sizes the buffer and is
    checked against ``memory_budget`` (bytes, ``None`` disables the check).
    """
    points = _as_points(getattr(pool, "X", pool), state.kernel.dim)
    n = state.n
    n_max = max(n_max or 0, n + 16)
    _check_budget(points.shape[0], n_max, memory_budget)
    cross = np.empty((points.shape[0], n_max))
    means = np.empty(points.shape[0])
    var = np.empty(points.shape[0])
    for start in range(0, points.shape[0], _PREDICT_CHUNK):
        sl = slice(start, start + _PREDICT_CHUNK)
        means[sl], var[sl], cross[sl, :n] = _predict_rows(state, points[sl])
    var = _clamp_variance(var, state.kernel, state.jitter)
    return PoolPredictionCache(points, cross, n, means, var, state.version, memory_budget,
                               state.kernel.variance)


def recursive_append(cache, state, x_new, y_new, floor=DUPLICATE_FLOOR):
    """Add ``(x_new, y_new)`` to the posterior and refresh cached predictions.

    ``cache`` may be one ``PoolPredictionCache`` or a sequence of them (e.g.
    the candidate pool and the Monte-Carlo set); all are updated in place.
    ``x_new`` must carry posterior variance above ``floor * tau^2``.
    Returns ``(cache, new_state)``.
    """
    caches = list(cache) if isinstance(cache, (list, tuple)) else [cache]
    kernel = state.kernel
    x_new = _as_points(x_new, kernel.dim)[0]
    y_new = float(y_new)
    if not np.isfinite(y_new):
        raise NonFiniteInputError("response is not finite")
    for c in caches:
        if c.n != state.n or c.state_version != state.version:
            raise ValueError("cache does not match the posterior state it is being updated with")

    n = state.n
    kss = kernel.variance + state.jitter
    if n:
        k_new = kernel.matrix(state.dataset.X, x_new[None, :])[:, 0]
        ell = solve_triangular(state.chol, k_new, lower=True, check_finite=False)
        w = solve_triangular(state.chol, ell, lower=True, trans="T", check_finite=False)
        var_new = kss - ell @ ell
        mean_new = k_new @ state.alpha_vec
    else:
        ell = w = np.empty(0)
        var_new = kss
        mean_new = 0.0
    if var_new <= floor * kernel.variance:
        raise DuplicatePointError(
            f"posterior variance {var_new:.3e} at the new point is below the duplicate floor")

    mean_step = (y_new - mean_new) / var_new
    for c in caches:
        c._reserve(n + 1)
        _backend.call("recursive_update", c.points, x_new, kernel.inv_lengthscales,
                      kernel.variance, kernel.code, c._cross, n, w, c.means, c.variances,
                      mean_step, 1.0 / var_new)
        _clamp_variance(c.variances, kernel, state.jitter)

    L = np.zeros((n + 1, n + 1))
    L[:n, :n] = state.chol
    L[n, :n] = ell
    L[n, n] = np.sqrt(var_new)
    dataset = state.dataset.append(x_new, y_new)
    alpha = cho_solve((L, True), dataset.y, check_finite=False)
    new_state = PosteriorState(kernel, dataset, L, alpha, state.jitter)
    for c in caches:
        c.n = n + 1
        c.state_version = new_state.version
    return cache, new_state


# -- hyperparameters ---------------------------------------------------------

def _kernel_grads(kernel, X):
    """Gram matrix and its derivatives w.r.t. log lengthscales."""
    K = kernel.matrix(X)
    Z = X * kernel.inv_lengthscales
    D = [(Z[:, k, None] - Z[None, :, k]) ** 2 for k in range(X.shape[1])]
    tau2 = kernel.variance
    if kernel.family == "RBF":
        return K, [K * Dk for Dk in D]
    r = np.sqrt(sum(D))
    if kernel.nu == 0.5:
        with np.errstate(divide="ignore", invalid="ignore"):
            base = np.where(r > 0, tau2 * np.exp(-r) / r, 0.0)
    elif kernel.nu == 1.5:
        base = 3.0 * tau2 * np.exp(-np.sqrt(3.0) * r)
    else:
        s5r = np.sqrt(5.0) * r
        base = (5.0 / 3.0) * tau2 * (1.0 + s5r) * np.exp(-s5r)
    return K, [base * Dk for Dk in D]


def negative_log_likelihood(theta, X, y, family, nu=1.5):
    """Negative log marginal likelihood and its gradient in log-parameter space.

    ``theta = [log amplitude, log lengthscale_1, ..., log lengthscale_d]``.
    """
    kernel = KernelConfig(family, np.exp(theta[0]), np.exp(theta[1:]), nu)
    K, dK = _kernel_grads(kernel, X)
    try:
        L, jitter = _factorize(K, kernel.variance)
    except SingularCovarianceError:
        return np.inf, np.zeros_like(theta)
    alpha = cho_solve((L, True), y, check_finite=False)
    n = len(y)
    nll = 0.5 * y @ alpha + np.log(np.diag(L)).sum() + 0.5 * n * np.log(2 * np.pi)
    Kinv = cho_solve((L, True), np.eye(n), check_finite=False)
    inner = Kinv - np.outer(alpha, alpha)
    grad = np.empty_like(theta)
    grad[0] = np.sum(inner * (K + jitter * np.eye(n)))
    for k, dKk in enumerate(dK):
        grad[1 + k] = 0.5 * np.sum(inner * dKk)
    return nll, grad


def hyperparameter_bounds(dataset, domain_scale=None):
    y_scale = np.sqrt(np.mean(dataset.y**2))
    if not np.isfinite(y_scale) or y_scale <= 0:
        y_scale = 1.0
    if domain_scale is None:
        domain_scale = np.ptp(dataset.X, axis=0)
    domain_scale = np.broadcast_to(np.asarray(domain_scale, dtype=float), (dataset.d,)).copy()
    domain_scale[~(domain_scale > 0)] = 1.0
    ln10 = np.log(10.0)
    lo = np.concatenate([[np.log(y_scale) - 3 * ln10], np.log(domain_scale) - 2 * ln10])
    hi = np.concatenate([[np.log(y_scale) + 3 * ln10], np.log(domain_scale) + 2 * ln10])
    return lo, hi


FIT_MAX_EVALS = 200


def fit_hyperparameters(dataset, family, restarts=5, seed=0, domain_scale=None, nu=1.5,
                        initial=None):
    """Maximize the log marginal likelihood over amplitude and lengthscales.

    Multi-start L-BFGS-B in log space.  The first start sits at the data RMS
    and the domain scale; the remaining ones are drawn uniformly inside the
    bounds from ``seed``.  Bounds: amplitude within 10^+-3 of the RMS of ``y``,
    lengthscales within 10^+-2 of ``domain_scale`` (per dimension, defaults
    to the extent of ``dataset.X``).  ``initial`` (a previous
    ``KernelConfig``) replaces the first start, which warm-starts refits.
    Each restart is capped at ``FIT_MAX_EVALS`` likelihood evaluations.
    """
    if dataset.n < 2:
        raise ValueError("hyperparameter fitting needs at least 2 samples")
    X = _as_points(dataset.X)
    y = dataset.y
    lo, hi = hyperparameter_bounds(dataset, domain_scale)
    rng = np.random.default_rng(seed)
    if initial is not None:
        first = np.log(np.concatenate([[initial.amplitude], initial.lengthscales]))
        starts = [np.clip(first, lo, hi)]
    else:
        starts = [0.5 * (lo + hi)]
    starts += [rng.uniform(lo, hi) for _ in range(max(restarts, 1) - 1)]

    best_theta, best_val = None, np.inf
    for theta0 in starts:
        try:
            res = minimize(negative_log_likelihood, theta0, args=(X, y, family, nu), jac=True,
                           method="L-BFGS-B", bounds=list(zip(lo, hi)),
                           options={"maxfun": FIT_MAX_EVALS})
        except (ValueError, np.linalg.LinAlgError) as exc:
            logger.debug("restart failed: %s", exc)
            continue
        if np.isfinite(res.fun) and res.fun < best_val:
            best_theta, best_val = np.clip(res.x, lo, hi), res.fun
    if best_theta is None:
        raise FitError("likelihood maximization failed on every restart", best=None)
    return KernelConfig(family, np.exp(best_theta[0]), np.exp(best_theta[1:]), nu)


# -- prior realizations -------------------------------------------------------

class PriorRealization:
    """One GP prior draw on a tensor grid, evaluated by multilinear interpolation.

    Queries outside the grid box are clipped onto its boundary.
    """

    def __init__(self, axes, values, kernel, seed):
        from scipy.interpolate import RegularGridInterpolator

        self.axes = [np.asarray(a) for a in axes]
        self.values = values
        self.kernel = kernel
        self.seed = seed
        self._lo = np.array([a[0] for a in self.axes])
        self._hi = np.array([a[-1] for a in self.axes])
        self._interp = RegularGridInterpolator(self.axes, values, method="linear")

    @property
    def dim(self):
        return len(self.axes)

    def __call__(self, X):
        X = _as_points(X, self.dim)
        return self._interp(np.clip(X, self._lo, self._hi))


_factor_cache = {}


def _grid_factor(kernel, axes, max_dense):
    key = (kernel, tuple((a[0], a[-1], len(a)) for a in axes), max_dense)
    if key in _factor_cache:
        return _factor_cache[key]
    total = int(np.prod([len(a) for a in axes]))
    if kernel.family == "RBF":
        factors = []
        for k, a in enumerate(axes):
            one = KernelConfig("RBF", 1.0, [kernel.lengthscales[k]])
            Kk = one.matrix(a[:, None])
            factors.append(_factorize(Kk, 1.0)[0])
        out = ("kron", factors)
    elif total <= max_dense:
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        out = ("dense", _factorize(kernel.matrix(grid), kernel.variance)[0])
    else:
        out = ("circulant", _circulant_eigs(kernel, axes))
    if len(_factor_cache) > 8:
        _factor_cache.clear()
    _factor_cache[key] = out
    return out


def _circulant_eigs(kernel, axes):
    """Eigenvalues of the periodic embedding of the grid covariance."""
    steps = np.array([a[1] - a[0] for a in axes])
    sizes = [2 * (len(a) - 1) for a in axes]
    for _ in range(6):
        offsets = [np.minimum(np.arange(m), m - np.arange(m)) * h for m, h in zip(sizes, steps)]
        mesh = np.stack(np.meshgrid(*offsets, indexing="ij"), axis=-1).reshape(-1, len(axes))
        row = kernel.matrix(mesh, np.zeros((1, len(axes))))[:, 0].reshape(sizes)
        eig = np.fft.fftn(row).real
        if eig.min() >= -1e-10 * eig.max():
            return np.maximum(eig, 0.0)
        sizes = [2 * m for m in sizes]
    raise SingularCovarianceError("circulant embedding is not positive semidefinite")


def sample_prior_realization(kernel, domain, grid_per_dim, seed, max_dense=10000):
    """Draw a GP prior sample on a tensor grid over ``domain`` and wrap it as a function.

    ``domain`` is a sequence of ``(low, high)`` pairs, one per dimension.
    Separable (RBF) kernels are factorized per axis; other kernels use a
    dense Cholesky while the grid has at most ``max_dense`` nodes and an
    exact circulant embedding beyond that.
    """
    if grid_per_dim < 2:
        raise ValueError("grid_per_dim must be at least 2")
    domain = np.asarray(domain, dtype=float).reshape(-1, 2)
    if domain.shape[0] != kernel.dim:
        raise DimensionError(f"domain has {domain.shape[0]} dimensions, kernel has {kernel.dim}")
    axes = [np.linspace(lo, hi, grid_per_dim) for lo, hi in domain]
    shape = tuple(len(a) for a in axes)
    kind, factor = _grid_factor(kernel, axes, max_dense)
    rng = np.random.default_rng(seed)
    if kind == "kron":
        values = rng.standard_normal(shape)
        for k, Lk in enumerate(factor):
            values = np.moveaxis(np.tensordot(Lk, values, axes=([1], [k])), 0, k)
        values *= kernel.amplitude
    elif kind == "dense":
        values = (factor @ rng.standard_normal(factor.shape[0])).reshape(shape)
    else:
        z = rng.standard_normal(factor.shape) + 1j * rng.standard_normal(factor.shape)
        field_ = np.fft.fftn(np.sqrt(factor / factor.size) * z).real
        values = field_[tuple(slice(0, m) for m in shape)]
    return PriorRealization(axes, np.ascontiguousarray(values), kernel, seed)
