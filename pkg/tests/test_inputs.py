import numpy as np
import pytest
from scipy import stats

from rarelw.errors import DimensionError
from rarelw.inputs import (HalfPlaneTruncatedNormal, IndependentNormal, StandardNormal,
                           TruncatedNormal, Uniform)


@pytest.mark.parametrize("dist", [
    StandardNormal(2),
    IndependentNormal([15.0, np.pi / 2], [3.75, np.pi / 8]),
    HalfPlaneTruncatedNormal([15.0, np.pi / 2], [3.75, np.pi / 8], dim=1, upper=np.pi / 2,
                             positive=(0,)),
    Uniform([0.0, -1.0], [1.0, 3.0]),
])
def test_sampler_matches_marginals(dist):
    X = dist.sample(10_000, 0)
    for k, marg in enumerate(dist.marginals):
        assert stats.kstest(X[:, k], marg.cdf).pvalue > 0.01


def test_standard_normal_logpdf():
    X = np.random.default_rng(0).normal(size=(50, 3))
    np.testing.assert_allclose(StandardNormal(3).logpdf(X), stats.norm.logpdf(X).sum(1))


def test_truncated_renormalized():
    d = HalfPlaneTruncatedNormal([0.0, 0.0], [1.0, 1.0], dim=1, upper=0.0)
    x = np.array([[0.3, -0.5]])
    expected = stats.norm.logpdf(0.3) + stats.norm.logpdf(-0.5) + np.log(2.0)
    assert d.logpdf(x)[0] == pytest.approx(expected)
    assert d.logpdf([[0.0, 0.5]])[0] == -np.inf
    assert np.all(d.sample(1000, 1)[:, 1] <= 0.0)


def test_ppf_monotone_and_bounded():
    d = TruncatedNormal([1.0], [2.0], lower=[0.0])
    u = np.linspace(0.001, 0.999, 50)[:, None]
    x = d.ppf(u)[:, 0]
    assert np.all(np.diff(x) > 0) and x.min() >= 0.0


def test_dimension_check():
    with pytest.raises(DimensionError):
        StandardNormal(2).logpdf(np.zeros((3, 3)))


def test_box_respects_support():
    d = HalfPlaneTruncatedNormal([15.0, np.pi / 2], [3.75, np.pi / 8], dim=1, upper=np.pi / 2,
                                 positive=(0,))
    box = d.box(6.0)
    assert box[0, 0] >= 0.0 and box[1, 1] <= np.pi / 2
