"""Discrete acquisition maximization over a fixed Latin-hypercube candidate pool."""
import csv
import itertools
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.stats import qmc

from . import _backend
from .errors import PoolExhaustedError
from .gp import (DUPLICATE_FLOOR, Dataset, KernelConfig, build_posterior, init_pool_cache,
                 predict_batch, recursive_append)

TIMING_HEADER = ("n", "path", "median_seconds", "threads")
UPDATE_PATHS = ("brute", "naive", "regrouped")

_generations = itertools.count(1)


@dataclass(frozen=True)
class CandidatePool:
    X: np.ndarray
    seed: int
    generation: int = field(default_factory=lambda: next(_generations))

    @property
    def n_mc(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]


def latin_hypercube(d, n, seed):
    """Scrambled LHS on the unit cube: each marginal hits every ``1/n`` bin once."""
    return qmc.LatinHypercube(d=d, seed=np.random.default_rng(seed)).random(n)


def build_pool(dist, n_mc, seed):
    if n_mc < 100:
        raise ValueError(f"n_mc must be at least 100, got {n_mc}")
    if not callable(getattr(dist, "ppf", None)):
        raise TypeError("input distribution has no quantile transform")
    U = latin_hypercube(dist.dim, n_mc, seed)
    return CandidatePool(np.ascontiguousarray(dist.ppf(U)), int(seed))


def select_next(pool, cache, scores, floor=DUPLICATE_FLOOR):
    """Lowest-index argmax of ``scores`` among points whose variance clears the floor."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != (cache.n_points,):
        raise ValueError(f"expected {cache.n_points} scores, got shape {scores.shape}")
    eligible = cache.variances >= floor * cache.prior_variance
    if not eligible.any():
        raise PoolExhaustedError("every candidate is within the duplicate floor of the data")
    masked = np.where(eligible, scores, -np.inf)
    idx = int(np.argmax(masked))
    points = pool.X if hasattr(pool, "X") else np.asarray(pool)
    return idx, points[idx].copy()


# -- timing benchmark ---------------------------------------------------------

def _naive_update(state, Q, means, variances, x_new, y_new):
    """Recursive update computing ``K(Q, X) K^-1`` first (n_mc x n Cholesky solve)."""
    kernel = state.kernel
    X = state.dataset.X
    kx = kernel.matrix(X, x_new[None, :])[:, 0]
    KQX = kernel.matrix(Q, X)
    A = cho_solve((state.chol, True), KQX.T, check_finite=False)
    cov = kernel.matrix(Q, x_new[None, :])[:, 0] - A.T @ kx
    ell = solve_triangular(state.chol, kx, lower=True, check_finite=False)
    var_new = kernel.variance + state.jitter - ell @ ell
    mean_new = kx @ state.alpha_vec
    return (means + cov * (y_new - mean_new) / var_new,
            variances - cov * cov / var_new)


def _brute_update(state, Q, x_new, y_new):
    """Retrain on the enlarged dataset and predict with the direct formulas."""
    new_state = build_posterior(state.dataset.append(x_new, y_new), state.kernel)
    KQX = new_state.kernel.matrix(Q, new_state.dataset.X)
    A = cho_solve((new_state.chol, True), KQX.T, check_finite=False)
    means = KQX @ new_state.alpha_vec
    var = new_state.kernel.variance - np.einsum("ij,ji->i", KQX, A)
    return means, var


def _regrouped_update(cache, state, x_new, y_new):
    recursive_append(cache, state, x_new, y_new)
    return cache.means, cache.variances


def _fixture(n_mc, n, d, seed, kernel):
    # box grows with n so the design density (and conditioning) stays fixed
    half = max(3.0, 0.6 * (n + 1) ** (1.0 / d))
    rng = np.random.default_rng(seed)
    Q = np.ascontiguousarray(rng.uniform(-half, half, size=(n_mc, d)))
    X = rng.uniform(-half, half, size=(n + 1, d))
    y = np.sin(X).sum(axis=1)
    state = build_posterior(Dataset(X[:n], y[:n]), kernel)
    return Q, state, X[n], y[n]


def check_update_equivalence(n_mc, n, d=2, seed=0, kernel=None, rtol=1e-8, atol=1e-10):
    """Run all three update paths once and return the largest relative disagreement."""
    kernel = kernel or KernelConfig("RBF", 1.0, (1.0,) * d)
    Q, state, x_new, y_new = _fixture(n_mc, n, d, seed, kernel)
    m0, v0 = predict_batch(state, Q)
    cache = init_pool_cache(state, Q, n_max=n + 1, memory_budget=None)
    ref = _brute_update(state, Q, x_new, y_new)
    others = [_naive_update(state, Q, m0, v0, x_new, y_new),
              _regrouped_update(cache, state, x_new, y_new)]
    worst = 0.0
    for got in others:
        for a, b in zip(got, ref):
            err = np.abs(a - b) / (atol / rtol + np.abs(b))
            worst = max(worst, float(err.max()))
    return worst


def benchmark_update_paths(n_mc, n_range, repeats=5, threads=None, d=2, seed=0, kernel=None,
                           paths=UPDATE_PATHS, check=True):
    """Median per-iteration time of each pool-update path for every ``n``.

    Returns a list of rows ``{"n", "path", "median_seconds", "threads"}``.
    Every timed call is preceded by one untimed warm-up; cache copies are
    made outside the timed region.
    """
    threads = _backend.get_num_threads() if threads is None else int(threads)
    kernel = kernel or KernelConfig("RBF", 1.0, (1.0,) * d)
    rows = []
    for n in n_range:
        if check:
            worst = check_update_equivalence(min(n_mc, 20000), n, d, seed, kernel)
            if worst > 1e-8:
                raise AssertionError(f"update paths disagree at n={n} (relative error {worst:.2e})")
        Q, state, x_new, y_new = _fixture(n_mc, n, d, seed, kernel)
        timings = {}
        if "naive" in paths:
            m0, v0 = predict_batch(state, Q)
        if "regrouped" in paths:
            base = init_pool_cache(state, Q, n_max=n + 1, memory_budget=None)
        for path in paths:
            samples = []
            for rep in range(repeats + 1):
                if path == "regrouped":
                    c = base.copy()
                    t0 = time.perf_counter()
                    _regrouped_update(c, state, x_new, y_new)
                elif path == "naive":
                    t0 = time.perf_counter()
                    _naive_update(state, Q, m0, v0, x_new, y_new)
                else:
                    t0 = time.perf_counter()
                    _brute_update(state, Q, x_new, y_new)
                elapsed = time.perf_counter() - t0
                if rep:
                    samples.append(elapsed)
            timings[path] = float(np.median(samples))
        for path in paths:
            rows.append({"n": int(n), "path": path, "median_seconds": timings[path],
                         "threads": threads})
    return rows


def write_timing_csv(rows, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIMING_HEADER)
        for r in rows:
            writer.writerow([r["n"], r["path"], repr(r["median_seconds"]), r["threads"]])


def loglog_slope(ns, seconds):
    """Least-squares slope of ``log(seconds)`` against ``log(n)``."""
    return float(np.polyfit(np.log(np.asarray(ns, float)), np.log(np.asarray(seconds, float)), 1)[0])
