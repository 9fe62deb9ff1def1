import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from mixlogit.errors import DomainError, NonPositiveDefinite
from mixlogit.stats import (RandomStream, cholesky, gumbel_from_uniform, log_density_mvn, sample_beta,
                            sample_categorical, sample_categorical_rows, sample_dirichlet, sample_gamma,
                            sample_gumbel, sample_inverse_wishart, sample_mvn, sample_snl, snl_density)

EULER_GAMMA = 0.5772156649015329


def rs(seed=0):
    return RandomStream(seed)


# --- RandomStream


def test_same_seed_same_sequence():
    assert np.array_equal(rs(7).normal(100), rs(7).normal(100))
    assert not np.array_equal(rs(7).normal(10), rs(8).normal(10))


def test_child_streams_addressable_and_distinct():
    root = rs(3)
    a = root.child(1).normal(5)
    root.child(0).normal(1000)  # consuming another child does not shift child(1)
    assert np.array_equal(a, rs(3).child(1).normal(5))
    assert not np.array_equal(rs(3).child(0).normal(5), rs(3).child(1).normal(5))


def test_fork_gives_independent_streams():
    streams = rs(11).fork(3)
    x = np.array([s.normal(20000) for s in streams])
    c = np.corrcoef(x)
    assert np.all(np.abs(c[np.triu_indices(3, 1)]) < 0.03)


def test_uniform_is_clamped():
    u = rs(0).uniform(10**5)
    assert u.min() >= 1e-16 and u.max() <= 1 - 1e-16


# --- sample_mvn / cholesky


def test_mvn_identity_moments():
    x = sample_mvn([0.0, 0.0], np.eye(2), rs(1), size=10**5)
    assert np.allclose(np.cov(x.T), np.eye(2), atol=0.05)
    assert np.array_equal(sample_mvn([0.0, 0.0], np.eye(2), rs(1)), sample_mvn([0.0, 0.0], np.eye(2), rs(1)))


def test_mvn_one_dimensional_mean():
    x = sample_mvn([5.0], [[1.0]], rs(2), size=10**5)
    assert abs(x.mean() - 5.0) < 0.01


def test_mvn_moments_within_five_se():
    cov = np.array([[2.0, 0.6], [0.6, 1.0]])
    x = sample_mvn([1.0, -1.0], cov, rs(3), size=10**5)
    se = np.sqrt(np.diag(cov) / x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - [1.0, -1.0]) < 5 * se)


def test_tiny_covariance_rejected():
    with pytest.raises(NonPositiveDefinite):
        sample_mvn([0.0, 0.0], 1e-12 * np.eye(2), rs())


def test_non_pd_error_names_matrix():
    with pytest.raises(NonPositiveDefinite, match="Omega"):
        cholesky(np.array([[1.0, 2.0], [2.0, 1.0]]), "Omega")


def test_asymmetric_rejected():
    with pytest.raises(NonPositiveDefinite):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_relative_tolerance_accepts_small_variance():
    assert cholesky(np.array([[1e-12]]), relative=True)[0, 0] == pytest.approx(1e-6)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(0, 10**6))
def test_cholesky_reconstructs_random_spd(R, seed):
    g = np.random.default_rng(seed)
    A = g.normal(size=(R, R))
    cov = A @ A.T + 0.5 * np.eye(R)
    L = cholesky(cov)
    assert np.allclose(L @ L.T, cov, atol=1e-10)
    assert np.allclose(np.triu(L, 1), 0.0)


# --- inverse Wishart


def test_iw_mean_two_dim():
    assert sample_inverse_wishart(10.0, np.eye(2), rs(4)).shape == (2, 2)
    stack = sample_inverse_wishart(np.full(10**5, 10.0), np.broadcast_to(np.eye(2), (10**5, 2, 2)), rs(4))
    target = np.eye(2) / 7.0
    assert np.all(np.abs(stack.mean(axis=0) - target) <= 0.05 * target.max())


def test_iw_one_dim_inverse_gamma():
    # IW(3, [[2]]) in one dimension is inverse-gamma(1.5, 1) with mean 2 (heavy tailed: compare medians too)
    x = sample_inverse_wishart(np.full(10**6, 3.0), np.full((10**6, 1, 1), 2.0), rs(5))[:, 0, 0]
    assert abs(x.mean() - 2.0) < 0.1
    assert np.median(x) == pytest.approx(stats.invgamma(1.5, scale=1.0).median(), rel=0.01)


@pytest.mark.parametrize("df", [1.0, 0.5, -3.0])
def test_iw_invalid_df(df):
    # the domain is df > dim - 1
    with pytest.raises(DomainError):
        sample_inverse_wishart(df, np.eye(2), rs())


def test_iw_fractional_df_inside_domain():
    x = sample_inverse_wishart(1.5, np.eye(2), rs())
    assert np.all(np.linalg.eigvalsh(x) > 0)


def test_iw_draws_are_pd_and_symmetric():
    x = sample_inverse_wishart(np.full(1000, 3.0), np.broadcast_to(np.eye(3), (1000, 3, 3)), rs(6))
    assert np.array_equal(x, np.swapaxes(x, 1, 2))
    assert np.all(np.linalg.eigvalsh(x) > 0)


# --- gamma, beta, Dirichlet


def test_gamma_scale_convention_mean():
    x = sample_gamma(2.0, scale=2.0, rng=rs(7), size=10**5)
    assert abs(x.mean() - 4.0) < 0.1


def test_gamma_rate_convention_exponential_tail():
    x = sample_gamma(1.0, rate=1.0, rng=rs(8), size=10**5)
    assert abs((x > 1).mean() - math.exp(-1)) < 0.005


@pytest.mark.parametrize("kwargs", [dict(rate=1.0, scale=1.0), dict()])
def test_gamma_requires_exactly_one_convention(kwargs):
    with pytest.raises(DomainError):
        sample_gamma(1.0, rng=rs(), **kwargs)


def test_gamma_rejects_zero_shape():
    with pytest.raises(DomainError):
        sample_gamma(0.0, rate=1.0, rng=rs())


def test_beta_uniform_and_mean():
    assert abs(sample_beta(1.0, 1.0, rs(9), size=10**5).mean() - 0.5) < 0.005
    assert abs(sample_beta(1.0, 4.0, rs(10), size=10**5).mean() - 0.2) < 0.005
    with pytest.raises(DomainError):
        sample_beta(-1.0, 1.0, rs())


def test_beta_open_interval():
    x = sample_beta(1e-3, 1e-3, rs(12), size=10**4)
    assert np.all((x > 0) & (x < 1))


def test_dirichlet_cases():
    w = sample_dirichlet([1e6, 1e6], rs(13))
    assert np.all(np.abs(w - 0.5) < 0.01)
    assert np.array_equal(sample_dirichlet([3.0], rs()), [1.0])
    g = rs(14)
    first = np.array([sample_dirichlet([2.0, 6.0], g)[0] for _ in range(10**5)])
    assert abs(first.mean() - 0.25) < 0.005
    with pytest.raises(DomainError):
        sample_dirichlet([1.0, 0.0], rs())


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(1e-2, 1e3), min_size=1, max_size=8), st.integers(0, 2**32))
def test_dirichlet_sums_to_one(conc, seed):
    assert abs(sample_dirichlet(conc, rs(seed)).sum() - 1.0) <= 1e-12


# --- categorical


def test_categorical_degenerate_and_frequency():
    g = rs(15)
    assert all(sample_categorical([1.0, 0.0, 0.0], g) == 0 for _ in range(100))
    idx = sample_categorical_rows(np.full((10**5, 2), 0.5), rs(16))
    assert abs((idx == 0).mean() - 0.5) < 0.005


def test_categorical_rejects_non_simplex():
    with pytest.raises(DomainError):
        sample_categorical([0.3, 0.3, 0.3], rs())


# --- Gumbel


def test_gumbel_inversion_and_mean():
    assert gumbel_from_uniform(math.exp(-1)) == pytest.approx(0.0, abs=1e-15)
    assert abs(sample_gumbel(rs(17), size=10**6).mean() - EULER_GAMMA) < 0.005


def test_gumbel_clamped_finite():
    assert np.isfinite(gumbel_from_uniform(1.0)) and np.isfinite(gumbel_from_uniform(0.0))
    assert gumbel_from_uniform(1.0) > 30


# --- skew-normal-logistic


def _snl_cdf_grid(mu, sigma, lam, lo, hi, n=200001):
    x = np.linspace(lo, hi, n)
    f = snl_density(x, mu, sigma, lam)
    F = np.concatenate([[0.0], np.cumsum(0.5 * (f[1:] + f[:-1]) * np.diff(x))])
    return x, F


def test_snl_density_normalized():
    for params in [(0, 1, 50), (1, 1, -50), (-2, 1, 70)]:
        total = integrate.quad(lambda t: snl_density(t, *params), -20, 20, points=[params[0]], limit=200)[0]
        assert total == pytest.approx(1.0, abs=1e-8)


def test_snl_lambda_zero_is_normal():
    x = sample_snl(0.0, 1.0, 0.0, rs(18), size=10**5)
    y = sample_mvn([0.0], [[1.0]], rs(19), size=10**5)[:, 0]
    assert stats.ks_2samp(x, y).statistic < 1.63 * math.sqrt(2 / 10**5)


def test_snl_histogram_matches_density():
    x = sample_snl(0.0, 1.0, 50.0, rs(20), size=10**6)
    grid, F = _snl_cdf_grid(0.0, 1.0, 50.0, -1.0, 6.0)
    edges = np.linspace(-0.2, 3.5, 38)
    expected = np.diff(np.interp(edges, grid, F))
    observed = np.histogram(x, edges)[0] / x.size
    assert np.max(np.abs(observed - expected)) <= 0.02 * expected.max()


def test_snl_left_skew_sign():
    x = sample_snl(1.0, 1.0, -50.0, rs(21), size=10**5)
    oracle = integrate.quad(lambda t: t * snl_density(t, 1.0, 1.0, -50.0), -20, 20, points=[1.0], limit=200)[0]
    assert x.mean() < 1.0 and oracle < 1.0
    assert abs(x.mean() - oracle) < 5 * x.std() / math.sqrt(x.size)


def test_snl_rejects_bad_sigma():
    with pytest.raises(DomainError):
        sample_snl(0.0, 0.0, 1.0, rs())


# --- normal log-density


def test_log_density_analytic_values():
    assert log_density_mvn(np.zeros(3), np.zeros(3), np.eye(3)) == pytest.approx(-1.5 * math.log(2 * math.pi))
    assert log_density_mvn([1.0], [0.0], [[1.0]]) == pytest.approx(-0.5 * math.log(2 * math.pi) - 0.5)


def test_log_density_matches_scipy_and_normalizes():
    g = np.random.default_rng(22)
    for _ in range(20):
        A = g.normal(size=(3, 3))
        cov = A @ A.T + np.eye(3)
        x, m = g.normal(size=3), g.normal(size=3)
        assert log_density_mvn(x, m, cov) == pytest.approx(stats.multivariate_normal(m, cov).logpdf(x), abs=1e-10)
    grid = np.linspace(-40, 40, 400001)
    dens = np.exp(log_density_mvn(grid[:, None], np.array([0.3]), [[2.5]]))
    assert np.trapezoid(dens, grid) == pytest.approx(1.0, abs=1e-8)


def test_log_density_rejects_non_pd():
    with pytest.raises(NonPositiveDefinite):
        log_density_mvn([0.0, 0.0], [0.0, 0.0], [[1.0, 2.0], [2.0, 1.0]])
