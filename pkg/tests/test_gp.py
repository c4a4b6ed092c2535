import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rarelw.errors import (DimensionError, DuplicatePointError, FitError, MemoryBudgetError,
                           NonFiniteInputError, SingularCovarianceError)
from rarelw.gp import (JITTER_START, Dataset, KernelConfig, build_posterior, fit_hyperparameters,
                       init_pool_cache, kernel_eval, predict_batch, recursive_append,
                       sample_prior_realization)
from rarelw.gp import _factorize


def rbf(amp=2.0, ls=(1.0, 1.0)):
    return KernelConfig("RBF", amp, ls)


def dense_posterior(kernel, X, y, Q, jitter):
    """Textbook posterior written with explicit inverses, as an independent oracle."""
    def k(A, B):
        diff = (A[:, None, :] - B[None, :, :]) / np.asarray(kernel.lengthscales)
        r = np.sqrt((diff**2).sum(-1))
        if kernel.family == "RBF":
            return kernel.variance * np.exp(-0.5 * r**2)
        s = np.sqrt(3.0) * r
        return kernel.variance * (1 + s) * np.exp(-s)

    Kinv = np.linalg.inv(k(X, X) + jitter * np.eye(len(X)))
    kq = k(Q, X)
    return kq @ Kinv @ y, kernel.variance - np.einsum("ij,jk,ik->i", kq, Kinv, kq)


class TestKernel:
    def test_rbf_self_covariance(self):
        assert kernel_eval(rbf(), [0, 0], [0, 0]) == pytest.approx(4.0, abs=1e-14)

    def test_rbf_unit_distance(self):
        assert kernel_eval(rbf(), [0, 0], [1, 0]) == pytest.approx(4 * np.exp(-0.5), rel=1e-14)
        assert kernel_eval(rbf(), [0, 0], [1, 0]) == pytest.approx(2.42612, abs=1e-5)

    def test_matern32_unit_distance(self):
        k = KernelConfig("Matern", 2.0, (1.0, 1.0), 1.5)
        expected = 4 * (1 + np.sqrt(3)) * np.exp(-np.sqrt(3))
        assert kernel_eval(k, [0, 0], [1, 0]) == pytest.approx(expected, rel=1e-14)
        assert kernel_eval(k, [0, 0], [1, 0]) == pytest.approx(1.933431, abs=1e-6)

    @pytest.mark.parametrize("nu,form", [
        (0.5, lambda r: np.exp(-r)),
        (2.5, lambda r: (1 + np.sqrt(5) * r + 5 * r**2 / 3) * np.exp(-np.sqrt(5) * r)),
    ])
    def test_other_matern_orders(self, nu, form):
        k = KernelConfig("Matern", 1.5, (2.0,), nu)
        assert kernel_eval(k, [0.3], [1.7]) == pytest.approx(2.25 * form(0.7), rel=1e-13)

    def test_lengthscale_scaling(self):
        k = KernelConfig("RBF", 1.0, (2.0, 0.5))
        assert kernel_eval(k, [0, 0], [2, 0.5]) == pytest.approx(np.exp(-1.0), rel=1e-14)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionError):
            kernel_eval(rbf(), [0, 0, 0], [0, 0, 0])

    def test_non_finite(self):
        with pytest.raises(NonFiniteInputError):
            kernel_eval(rbf(), [np.nan, 0], [0, 0])

    @pytest.mark.parametrize("bad", [dict(amplitude=0.0), dict(lengthscales=(1.0, -1.0)),
                                     dict(family="Matern", nu=1.0), dict(family="Cauchy")])
    def test_invalid_config(self, bad):
        kw = dict(family="RBF", amplitude=1.0, lengthscales=(1.0, 1.0))
        kw.update(bad)
        with pytest.raises(ValueError):
            KernelConfig(**kw)

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 30),
           family=st.sampled_from([("RBF", 1.5), ("Matern", 0.5), ("Matern", 1.5), ("Matern", 2.5)]))
    def test_gram_symmetric_psd(self, seed, n, family):
        rng = np.random.default_rng(seed)
        k = KernelConfig(family[0], rng.uniform(0.1, 5), rng.uniform(0.1, 3, size=2), family[1])
        X = rng.normal(size=(n, 2))
        K = k.matrix(X)
        assert np.array_equal(K, K.T)
        assert np.linalg.eigvalsh(K).min() >= -1e-8 * k.variance
        assert np.allclose(np.diag(K), k.variance, rtol=1e-14)


class TestPosterior:
    def test_empty_dataset_is_prior(self):
        state = build_posterior(Dataset.empty(2), rbf())
        m, v = predict_batch(state, np.random.default_rng(0).normal(size=(10, 2)))
        assert np.all(m == 0) and np.allclose(v, 4.0)

    def test_single_point_interpolation(self):
        state = build_posterior(Dataset([[0.5, -0.5]], [3.0]), rbf())
        m, v = predict_batch(state, [[0.5, -0.5]])
        assert m[0] == pytest.approx(3.0, abs=1e-6)
        assert v[0] <= 10 * state.jitter

    def test_interpolation_50_points(self):
        rng = np.random.default_rng(1)
        X = rng.uniform(-4, 4, size=(50, 2))
        y = np.sin(X[:, 0]) * np.cos(X[:, 1])
        state = build_posterior(Dataset(X, y), rbf(1.0))
        m, v = predict_batch(state, X)
        assert np.max(np.abs(m - y)) < 1e-5
        assert np.all(v <= 10 * state.jitter)

    def test_cholesky_reconstructs(self):
        rng = np.random.default_rng(2)
        X = rng.normal(size=(40, 2))
        state = build_posterior(Dataset(X, rng.normal(size=40)), rbf())
        K = state.kernel.matrix(X) + state.jitter * np.eye(40)
        L = state.chol
        assert np.linalg.norm(L @ L.T - K) / np.linalg.norm(K) < 1e-8
        resid = K @ state.alpha_vec - state.dataset.y
        assert np.linalg.norm(resid) / np.linalg.norm(state.dataset.y) < 1e-8

    def test_far_query_reverts_to_prior(self):
        state = build_posterior(Dataset([[0, 0], [1, 1]], [1.0, -2.0]), rbf())
        m, v = predict_batch(state, [[15.0, -12.0]])
        assert abs(m[0]) < 1e-4 and v[0] == pytest.approx(4.0, abs=1e-4)

    @pytest.mark.parametrize("family", ["RBF", "Matern"])
    def test_matches_dense_oracle(self, family):
        rng = np.random.default_rng(3)
        k = KernelConfig(family, 1.3, (0.7, 1.9))
        X, y, Q = rng.normal(size=(5, 2)), rng.normal(size=5), rng.normal(size=(3, 2))
        state = build_posterior(Dataset(X, y), k)
        m, v = predict_batch(state, Q)
        mo, vo = dense_posterior(k, X, y, Q, state.jitter)
        np.testing.assert_allclose(m, mo, atol=1e-10)
        np.testing.assert_allclose(v, vo, atol=1e-10)

    def test_jitter_escalates(self):
        # eigenvalues 2 and -1e-9: fails until the jitter passes 1e-9
        K = np.array([[1.0, 1.0 + 1e-9], [1.0 + 1e-9, 1.0]])
        L, jitter = _factorize(K, 1.0)
        assert jitter == pytest.approx(1e-8) and jitter > JITTER_START
        with pytest.raises(SingularCovarianceError):
            _factorize(np.array([[1.0, 2.0], [2.0, 1.0]]), 1.0)

    def test_exact_duplicate_rows_rejected(self):
        X = np.array([[0.0, 0.0], [3.0, 3.0], [0.0, 0.0]])
        with pytest.raises(DuplicatePointError, match=r"\[0, 2\]"):
            Dataset(X, [1.0, 2.0, 3.0])

    def test_singular_error_names_closest_rows(self, monkeypatch):
        import rarelw.gp as gp
        monkeypatch.setattr(gp, "JITTER_MAX", 1e-12)
        X = np.array([[0.0, 0.0], [3.0, 3.0], [1e-9, 0.0]])
        with pytest.raises(SingularCovarianceError) as info:
            build_posterior(Dataset(X, [1.0, 2.0, 3.0]), rbf())
        assert info.value.rows == (0, 2)

    def test_non_finite_query(self):
        state = build_posterior(Dataset([[0, 0]], [1.0]), rbf())
        with pytest.raises(NonFiniteInputError):
            predict_batch(state, [[np.inf, 0]])

    def test_variance_bounds(self):
        rng = np.random.default_rng(4)
        state = build_posterior(Dataset(rng.normal(size=(30, 2)), rng.normal(size=30)), rbf())
        _, v = predict_batch(state, rng.normal(size=(2000, 2)) * 3)
        assert v.min() >= 0 and v.max() <= 4.0 + state.jitter


class TestPoolCache:
    def test_empty_state(self):
        pool = np.random.default_rng(0).normal(size=(1000, 2))
        c = init_pool_cache(build_posterior(Dataset.empty(2), rbf()), pool)
        assert np.all(c.means == 0) and np.allclose(c.variances, 4.0) and c.cross_cov.shape == (1000, 0)

    def test_equals_predict_batch(self):
        rng = np.random.default_rng(1)
        state = build_posterior(Dataset(rng.normal(size=(20, 2)), rng.normal(size=20)), rbf())
        pool = rng.normal(size=(1000, 2))
        c = init_pool_cache(state, pool)
        m, v = predict_batch(state, pool)
        assert np.array_equal(c.means, m) and np.array_equal(c.variances, v)
        assert c.cross_cov.shape == (1000, 20)

    def test_budget(self):
        state = build_posterior(Dataset.empty(2), rbf())
        pool = np.zeros((200_000, 2))
        with pytest.raises(MemoryBudgetError):
            init_pool_cache(state, pool, n_max=1000, memory_budget=2**20)

    def test_append_from_prior(self):
        k = rbf()
        state = build_posterior(Dataset.empty(2), k)
        pool = np.random.default_rng(2).normal(size=(50, 2))
        c = init_pool_cache(state, pool)
        x_new, y_new = np.array([0.2, -0.1]), 1.7
        recursive_append(c, state, x_new, y_new)
        kx = k.matrix(pool, x_new[None, :])[:, 0]
        np.testing.assert_allclose(c.means, kx / (k.variance + state.jitter) * y_new, rtol=1e-12)

    def test_variance_at_new_point_vanishes(self):
        rng = np.random.default_rng(3)
        state = build_posterior(Dataset(rng.normal(size=(5, 2)), rng.normal(size=5)), rbf())
        pool = np.vstack([rng.normal(size=(20, 2)), [[0.3, 0.3]]])
        c = init_pool_cache(state, pool)
        recursive_append(c, state, [0.3, 0.3], 0.5)
        assert c.variances[-1] < 1e-8
        assert c.means[-1] == pytest.approx(0.5, abs=1e-6)

    def test_duplicate_rejected(self):
        state = build_posterior(Dataset([[0, 0], [1, 0]], [1.0, 2.0]), rbf())
        c = init_pool_cache(state, np.zeros((10, 2)))
        with pytest.raises(DuplicatePointError):
            recursive_append(c, state, [1.0, 0.0], 2.0)

    def test_stale_cache_rejected(self):
        state = build_posterior(Dataset([[0, 0]], [1.0]), rbf())
        c = init_pool_cache(state, np.ones((10, 2)))
        _, s2 = recursive_append(c, state, [2.0, 2.0], 0.0)
        with pytest.raises(ValueError):
            recursive_append(c, state, [3.0, 3.0], 0.0)
        recursive_append(c, s2, [3.0, 3.0], 0.0)
        assert c.n == 3 and c.cross_cov.shape == (10, 3)

    def test_buffer_growth_keeps_columns(self):
        rng = np.random.default_rng(5)
        k = rbf(1.0, (1.5, 1.5))
        state = build_posterior(Dataset.empty(2), k)
        pool = rng.uniform(-5, 5, size=(300, 2))
        c = init_pool_cache(state, pool, n_max=2)
        X = rng.uniform(-5, 5, size=(40, 2))
        for x in X:
            _, state = recursive_append(c, state, x, float(np.sin(x).sum()))
        assert c.capacity >= 40 and c.n == 40
        np.testing.assert_array_equal(c.cross_cov, k.matrix(pool, X))

    @settings(max_examples=15, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), n0=st.integers(0, 10), k_app=st.integers(1, 25),
           family=st.sampled_from(["RBF", "Matern"]))
    def test_recursive_equivalence(self, seed, n0, k_app, family):
        rng = np.random.default_rng(seed)
        kernel = KernelConfig(family, rng.uniform(0.5, 3), rng.uniform(0.5, 2, size=2))
        X = rng.uniform(-6, 6, size=(n0 + k_app, 2))
        y = np.sin(X[:, 0]) + X[:, 1] ** 2 / 10
        state = build_posterior(Dataset(X[:n0], y[:n0]), kernel)
        pool = rng.uniform(-6, 6, size=(2000, 2))
        cache = init_pool_cache(state, pool, n_max=4)
        prev_var = cache.variances.copy()
        for i in range(n0, n0 + k_app):
            _, state = recursive_append(cache, state, X[i], y[i])
            assert np.all(cache.variances <= prev_var + 1e-10)
            prev_var = cache.variances.copy()
        ref = build_posterior(Dataset(X, y), kernel)
        m, v = predict_batch(ref, pool)
        np.testing.assert_allclose(cache.means, m, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(cache.variances, v, rtol=1e-8, atol=1e-10)
        np.testing.assert_allclose(cache.cross_cov, kernel.matrix(pool, X), rtol=0, atol=0)

    def test_updates_several_caches_at_once(self):
        rng = np.random.default_rng(7)
        state = build_posterior(Dataset(rng.normal(size=(4, 2)), rng.normal(size=4)), rbf())
        a = init_pool_cache(state, rng.normal(size=(100, 2)))
        b = init_pool_cache(state, rng.normal(size=(70, 2)))
        _, s2 = recursive_append([a, b], state, [0.1, 0.9], 1.0)
        for c in (a, b):
            m, v = predict_batch(s2, c.points)
            np.testing.assert_allclose(c.means, m, rtol=1e-8, atol=1e-10)
            assert c.state_version == s2.version


class TestFit:
    def test_recovers_amplitude(self):
        k = rbf()
        f = sample_prior_realization(k, [(-6, 6)] * 2, 80, seed=11)
        rng = np.random.default_rng(0)
        X = rng.uniform(-6, 6, size=(200, 2))
        fitted = fit_hyperparameters(Dataset(X, f(X)), "RBF", restarts=5, seed=0,
                                     domain_scale=[12.0, 12.0])
        assert 1.4 <= fitted.amplitude <= 2.6

    def test_flat_data_hits_bound(self):
        ds = Dataset([[0.0, 0.0], [1.0, 1.0]], [1.0, 1.0])
        fitted = fit_hyperparameters(ds, "RBF", restarts=3, seed=0, domain_scale=[1.0, 1.0])
        assert np.allclose(fitted.lengthscales, 100.0, rtol=1e-6)

    def test_needs_two_points(self):
        with pytest.raises(ValueError):
            fit_hyperparameters(Dataset([[0.0, 0.0]], [1.0]), "RBF")

    def test_deterministic(self):
        rng = np.random.default_rng(3)
        X = rng.normal(size=(15, 2))
        ds = Dataset(X, np.sin(X).sum(1))
        a = fit_hyperparameters(ds, "Matern", seed=4)
        b = fit_hyperparameters(ds, "Matern", seed=4)
        assert a == b

    def test_all_restarts_fail(self, monkeypatch):
        import rarelw.gp as gp
        monkeypatch.setattr(gp, "minimize", lambda *a, **k: (_ for _ in ()).throw(ValueError("x")))
        with pytest.raises(FitError):
            fit_hyperparameters(Dataset([[0.0], [1.0]], [0.0, 1.0]), "RBF")


class TestPriorRealization:
    def test_grid_nodes_interpolated(self):
        f = sample_prior_realization(rbf(), [(-6, 6)] * 2, 30, seed=1)
        i, j = 7, 19
        assert f([[f.axes[0][i], f.axes[1][j]]])[0] == pytest.approx(f.values[i, j], abs=1e-12)

    def test_same_seed_same_function(self):
        Q = np.random.default_rng(0).uniform(-6, 6, size=(100, 2))
        a = sample_prior_realization(rbf(), [(-6, 6)] * 2, 40, seed=5)
        b = sample_prior_realization(rbf(), [(-6, 6)] * 2, 40, seed=5)
        assert np.array_equal(a(Q), b(Q))

    @pytest.mark.parametrize("family", ["RBF", "Matern"])
    def test_pointwise_variance(self, family):
        k = KernelConfig(family, 2.0, (1.0, 1.0))
        vals = np.array([sample_prior_realization(k, [(-2, 2)] * 2, 12, seed=s).values[5, 6]
                         for s in range(10_000)])
        se = 4.0 * np.sqrt(2 / (vals.size - 1))
        assert abs(vals.var(ddof=1) - 4.0) < 3 * se

    def test_circulant_path_variance(self):
        k = KernelConfig("Matern", 2.0, (1.0, 1.0, 1.0))
        vals = np.array([sample_prior_realization(k, [(-6, 6)] * 3, 12, seed=s, max_dense=100)
                         .values[3, 5, 8] for s in range(2000)])
        se = 4.0 * np.sqrt(2 / (vals.size - 1))
        assert abs(vals.var(ddof=1) - 4.0) < 3 * se

    def test_grid_too_small(self):
        with pytest.raises(ValueError):
            sample_prior_realization(rbf(), [(-1, 1)] * 2, 1, seed=0)
