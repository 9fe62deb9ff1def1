import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats
from scipy.special import expit

from mixlogit.data import ChoiceDataset, PersonRecord, make_task
from mixlogit.errors import CoverageError, InsufficientDraws, ShapeError, SpecMismatch
from mixlogit.evaluate import (batch_means_se, lppd_from_pointwise, lppd_train, lppd_validation,
                               mixture_density_grid, pointwise_log_lik, population_mean,
                               predictive_choice_distribution, tvd, tvd_mean, waic, waic_from_pointwise,
                               write_cdf_csv, write_density_grid_csv, write_summary_csv, wtp_summary)
from mixlogit.sampler import DrawLayout, MixingSpec, PosteriorDraws
from mixlogit.stats import RandomStream
from mixlogit.utility import UtilitySpec

LIN1 = UtilitySpec.linear([0])
LIN2 = UtilitySpec.linear([0, 1])


def make_draws(pi, zeta, omega, theta=None, n_chains=1, kind=None):
    """Fixed draws: every row holds the same mixture; ``theta`` is (S, N, D)."""
    pi, zeta, omega = np.atleast_1d(pi), np.atleast_2d(zeta), np.asarray(omega, dtype=float)
    K, R = zeta.shape
    omega = omega.reshape(K, R, R)
    theta = np.zeros((1, 1, R)) if theta is None else np.asarray(theta, dtype=float)
    layout = DrawLayout(K=K, R=R, Rn=0, N=theta.shape[1], D=R)
    rows = np.array([layout.pack([], [], pi, zeta, omega, 0.0, th, 0.0) for th in theta])
    kind = kind or ("mvn" if K == 1 else "fmon")
    return PosteriorDraws(layout, np.array_split(rows, n_chains), {"mixing": {"kind": kind, "K": K}})


def one_task_data(x, chosen=0, person="p", task=1):
    t = make_task(task, range(len(x)), x, chosen)
    return ChoiceDataset((PersonRecord(person, (t,)),), tuple(f"x{i}" for i in range(t.attributes.shape[1])))


# --- TVD


simplex = st.integers(2, 8).flatmap(
    lambda J: st.tuples(*[st.lists(st.floats(0.0, 1.0), min_size=J, max_size=J).filter(lambda v: sum(v) > 0)] * 3))


def norm(v):
    v = np.asarray(v)
    return v / v.sum()


@settings(max_examples=300, deadline=None)
@given(simplex)
def test_tvd_metric_properties(vs):
    p, q, r = (norm(v) for v in vs)
    assert tvd(p, p) == 0.0
    assert 0.0 <= tvd(p, q) <= 1.0 + 1e-15
    assert tvd(p, q) == tvd(q, p)
    assert tvd(p, r) <= tvd(p, q) + tvd(q, r) + 1e-12


def test_tvd_examples():
    assert tvd([1, 0], [0, 1]) == 1.0
    assert tvd([0.5, 0.3, 0.2], [0.2, 0.3, 0.5]) == pytest.approx(0.3, abs=1e-15)
    assert tvd_mean([[1, 0], [0.5, 0.5]], [[0, 1], [0.5, 0.5]]) == 0.5
    with pytest.raises(ShapeError):
        tvd([0.5, 0.5], [1.0, 0.0, 0.0])
    with pytest.raises(ShapeError):
        tvd_mean([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])


# --- LPPD and WAIC


def test_lppd_two_draw_oracle():
    ll = np.log([[0.5, 0.9], [0.25, 0.1]])
    assert lppd_from_pointwise(ll) == pytest.approx(math.log(0.375) + math.log(0.5), abs=1e-14)


def test_waic_small_oracle():
    ll = np.array([[-1.0, -0.5], [-2.0, -0.7], [-1.5, -0.3]])
    res = waic_from_pointwise(ll)
    assert res.p_waic == pytest.approx(0.25 + 0.04, abs=1e-14)
    assert res.waic == -2.0 * (res.lppd - res.p_waic)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 30), st.integers(1, 10), st.integers(0, 2**32 - 1))
def test_waic_identity_and_lppd_invariance(S, n, seed):
    g = np.random.default_rng(seed)
    ll = -g.exponential(2.0, size=(S, n))
    res = waic_from_pointwise(ll)
    assert abs(res.waic + 2.0 * (res.lppd - res.p_waic)) <= 1e-12 * max(1.0, abs(res.waic))
    assert res.p_waic >= 0
    assert lppd_from_pointwise(np.vstack([ll, ll])) == pytest.approx(res.lppd, abs=1e-10)
    assert lppd_from_pointwise(ll[g.permutation(S)]) == pytest.approx(res.lppd, abs=1e-10)


def test_waic_needs_two_draws():
    with pytest.raises(InsufficientDraws):
        waic_from_pointwise(np.zeros((1, 3)))
    d = make_draws(1.0, [[0.0]], [[1.0]])
    with pytest.raises(InsufficientDraws):
        waic(d, one_task_data([[1.0], [0.0]]), LIN1)


def test_pointwise_log_lik_matches_logit():
    theta = np.array([[[0.3]], [[-1.2]], [[2.0]]])
    d = make_draws(1.0, [[0.0]], [[1.0]], theta=theta)
    data = one_task_data([[1.0], [0.0], [0.5]], chosen=2)
    ll = pointwise_log_lik(d, data, LIN1)
    b = theta[:, 0, 0]
    expected = 0.5 * b - np.log(np.exp(b) + 1 + np.exp(0.5 * b))
    assert np.allclose(ll[:, 0], expected, atol=1e-13)
    assert lppd_train(d, data, LIN1) == pytest.approx(math.log(np.exp(expected).mean()), abs=1e-13)
    res = waic(d, data, LIN1)
    assert res.p_waic == pytest.approx(expected.var(ddof=1), abs=1e-13)


def test_pointwise_person_mismatch():
    d = make_draws(1.0, [[0.0]], [[1.0]], theta=np.zeros((2, 3, 1)))
    with pytest.raises(ShapeError):
        pointwise_log_lik(d, one_task_data([[1.0], [0.0]]), LIN1)


# --- predictive


def test_predictive_point_mass_equals_logit():
    beta = np.array([0.7, -1.1])
    d = make_draws(1.0, [beta], 1e-14 * np.eye(2), theta=np.zeros((3, 1, 2)))
    x = np.array([[1.0, 0.5], [0.0, 2.0], [-1.0, 0.0]])
    pred = predictive_choice_distribution(d, MixingSpec("mvn"), LIN2, one_task_data(x), n_taste_draws=50)
    v = x @ beta
    assert np.allclose(pred.task_probs(("p", "1")), np.exp(v) / np.exp(v).sum(), atol=1e-6)


def test_predictive_matches_quadrature():
    # binary logit with a N(1, 1) coefficient: P = E[expit(b)]
    d = make_draws(1.0, [[1.0]], [[1.0]], theta=np.zeros((50, 1, 1)))
    pred = predictive_choice_distribution(d, MixingSpec("mvn"), LIN1, one_task_data([[1.0], [0.0]]),
                                          n_taste_draws=2000, rng=RandomStream(3))
    exact = integrate.quad(lambda b: expit(b) * stats.norm.pdf(b, 1.0, 1.0), -np.inf, np.inf)[0]
    assert pred.probs[0, 0] == pytest.approx(exact, abs=0.003)
    assert pred.n_posterior_draws == 50 and pred.n_taste_draws == 2000


def test_predictive_mixture_components():
    # two point masses with weights 0.3/0.7
    zeta = np.array([[3.0], [-3.0]])
    d = make_draws([0.3, 0.7], zeta, np.full((2, 1, 1), 1e-14), theta=np.zeros((20, 1, 1)))
    pred = predictive_choice_distribution(d, MixingSpec("fmon", K=2), LIN1, one_task_data([[1.0], [0.0]]),
                                          n_taste_draws=2000, rng=RandomStream(4))
    exact = 0.3 * expit(3.0) + 0.7 * expit(-3.0)
    assert pred.probs[0, 0] == pytest.approx(exact, abs=0.01)


def test_predictive_rows_sum_to_one_and_respect_availability():
    d = make_draws(1.0, [[0.2, -0.4]], np.eye(2), theta=np.zeros((4, 1, 2)))
    tasks = ChoiceDataset((PersonRecord("a", (make_task(1, "xyz", [[1, 0], [0, 1], [1, 1]], 0, [True, False, True]),
                                              make_task(2, "xy", [[0, 0], [2, 1]], 1))),), ("u", "v"))
    pred = predictive_choice_distribution(d, MixingSpec("mvn"), LIN2, tasks, n_taste_draws=100)
    assert np.allclose(pred.probs.sum(axis=1), 1.0, atol=1e-12)
    assert pred.probs[0, 1] == 0.0 and pred.probs[1, 2] == 0.0
    assert len(pred) == 2 and pred.task_probs(("a", "2")).shape == (2,)


def test_predictive_checks_mixing_and_draw_count():
    d = make_draws(1.0, [[0.0]], [[1.0]])
    with pytest.raises(SpecMismatch):
        predictive_choice_distribution(d, MixingSpec("fmon", K=2), LIN1, one_task_data([[1.0], [0.0]]))
    empty = PosteriorDraws(d.layout, [d.matrix[:0]], d.meta)
    with pytest.raises(InsufficientDraws):
        predictive_choice_distribution(empty, MixingSpec("mvn"), LIN1, one_task_data([[1.0], [0.0]]))


def test_validation_lppd_and_coverage():
    d = make_draws(1.0, [[0.0]], [[1e-14]])
    val = one_task_data([[1.0], [0.0], [2.0]], chosen=2)
    pred = predictive_choice_distribution(d, MixingSpec("mvn"), LIN1, val, n_taste_draws=10)
    assert lppd_validation(pred, val) == pytest.approx(math.log(1 / 3), abs=1e-6)
    with pytest.raises(CoverageError):
        lppd_validation(pred, one_task_data([[1.0], [0.0]], person="q"))


def test_predictive_deterministic_for_seed():
    d = make_draws(1.0, [[0.5]], [[2.0]], theta=np.zeros((5, 1, 1)))
    data = one_task_data([[1.0], [0.0]])
    a = predictive_choice_distribution(d, MixingSpec("mvn"), LIN1, data, 100, RandomStream(9))
    b = predictive_choice_distribution(d, MixingSpec("mvn"), LIN1, data, 100, RandomStream(9))
    assert np.array_equal(a.probs, b.probs)


# --- heterogeneity summaries


def test_density_grid_matches_mixture_and_integrates():
    pi, zeta, var = np.array([0.4, 0.6]), np.array([[-2.0], [1.5]]), np.array([0.5, 1.2])
    d = make_draws(pi, zeta, var.reshape(2, 1, 1), theta=np.zeros((3, 1, 1)))
    grid = np.linspace(-12, 12, 4801)
    out = mixture_density_grid(d, grid)
    exact = (pi * stats.norm.pdf(grid[:, None], zeta[:, 0], np.sqrt(var))).sum(axis=1)
    assert np.allclose(out.mean, exact, rtol=1e-10, atol=1e-300)
    assert np.allclose(out.lower, out.upper)
    assert np.trapezoid(out.mean, grid) == pytest.approx(1.0, abs=1e-8)


def test_density_grid_shape_errors():
    d = make_draws(1.0, [[0.0, 0.0]], np.eye(2))
    with pytest.raises(ShapeError):
        mixture_density_grid(d, np.zeros((4, 3)))
    with pytest.raises(ShapeError):
        mixture_density_grid(d, np.zeros((0, 2)))


def test_population_mean_is_label_invariant():
    pi, zeta = np.array([0.2, 0.8]), np.array([[1.0, 2.0], [-1.0, 0.5]])
    omega = np.broadcast_to(np.eye(2), (2, 2, 2))
    a = population_mean(make_draws(pi, zeta, omega), LIN2)
    b = population_mean(make_draws(pi[::-1], zeta[::-1], omega), LIN2)
    assert np.allclose(a, [[-0.6, 0.8]]) and np.allclose(a, b)


def test_wtp_summary_for_known_normal(tmp_path):
    d = make_draws(1.0, [[1.0, -2.0]], np.diag([1.0, 4.0]), theta=np.zeros((40, 1, 2)), n_chains=2)
    s = wtp_summary(d, MixingSpec("mvn"), LIN2, n_taste_draws=2000, rng=RandomStream(5), names=["a", "b"])
    assert s.percentiles.shape == (2, 5) and np.all(np.diff(s.percentiles, axis=1) >= 0)
    z = stats.norm.ppf([0.1, 0.25, 0.5, 0.75, 0.9])
    assert np.allclose(s.percentiles, [1.0 + z, -2.0 + 2.0 * z], atol=0.05)
    assert np.allclose(s.mean, [1.0, -2.0]) and np.allclose(s.mean_sd, 0.0)
    assert np.all(np.diff(s.cdf, axis=1) >= 0) and s.cdf.min() >= 0 and s.cdf.max() <= 1
    write_summary_csv(s, tmp_path / "s.csv")
    write_cdf_csv(s, tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["parameter", "p10", "p25", "p50", "p75", "p90", "mean", "mean_sd", "mc_se"]
    assert [r[0] for r in rows[1:]] == ["a", "b"]
    assert len(list(csv.reader(open(tmp_path / "c.csv")))) == 1 + 2 * s.cdf.shape[1]


def test_density_grid_csv(tmp_path):
    d = make_draws(1.0, [[0.0]], [[1.0]])
    write_density_grid_csv(mixture_density_grid(d, [-1.0, 0.0, 1.0]), tmp_path / "g.csv", ["b"])
    rows = list(csv.reader(open(tmp_path / "g.csv")))
    assert rows[0] == ["b", "density_mean", "density_q0.05", "density_q0.95"]
    assert float(rows[2][1]) == pytest.approx(stats.norm.pdf(0.0), abs=1e-15)


def test_batch_means_se():
    g = np.random.default_rng(0)
    x = g.normal(size=(20_000, 1))
    se = batch_means_se(x, np.repeat([0, 1], 10_000))
    assert se[0] == pytest.approx(1 / math.sqrt(20_000), rel=0.5)
    assert np.isnan(batch_means_se(x[:5], np.zeros(5))).all()
