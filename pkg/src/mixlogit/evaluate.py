"""Posterior predictive choice distributions, fit metrics (TVD, LPPD, WAIC) and
label-switching-safe heterogeneity summaries.

Everything here is a pure function of retained draws.  Population summaries
only use permutation-invariant quantities: simulated tastes, mixture densities
on a grid, person-level draws and log-likelihoods.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .data import ChoiceDataset, atomic_write, format_float
from .errors import CoverageError, InsufficientDraws, ShapeError
from .sampler.draws import PosteriorDraws
from .sampler.model import MixingSpec
from .stats import RandomStream, cholesky
from .utility import LOG_PROB_FLOOR, PanelLikelihood, UtilitySpec, log_softmax, utilities

PERCENTILES = (10, 25, 50, 75, 90)
# cap on utilities held in memory at once (entries of the (draws, tasks, J) block)
CHUNK_ENTRIES = 4_000_000


# ---------------------------------------------------------------------------
# Population taste simulation


def _select(n_draws: int, max_draws: int | None) -> np.ndarray:
    if max_draws is None or max_draws >= n_draws:
        return np.arange(n_draws)
    return np.unique(np.linspace(0, n_draws - 1, max_draws).round().astype(int))


def simulate_population_tastes(draws: PosteriorDraws, utility: UtilitySpec, index: np.ndarray,
                               n_per_draw: int, rng: RandomStream) -> np.ndarray:
    """Tastes from the mixing distribution implied by each selected posterior draw.

    Returns ``(len(index), n_per_draw, D)`` in utility parameter order: a
    component is drawn from ``pi``, then a normal draw from that component;
    normal-block coordinates (WTP space) are independent normals.
    """
    L = draws.layout
    part = utility.partition
    index = np.asarray(index)
    S = index.size
    out = np.empty((S, n_per_draw, L.D))
    if L.R:
        pi = draws.pi()[index]
        zeta = draws.zeta()[index]
        chol = cholesky(draws.omega()[index], "Omega", relative=True)
        if L.K > 1:
            cdf = np.cumsum(pi, axis=1)
            u = rng.uniform((S, n_per_draw)) * cdf[:, -1:]
            comp = np.minimum((cdf[:, None, :] <= u[..., None]).sum(axis=-1), L.K - 1)
        else:
            comp = np.zeros((S, n_per_draw), dtype=np.int64)
        rows = np.arange(S)[:, None]
        z = rng.normal((S, n_per_draw, L.R))
        out[..., list(part.mixing)] = zeta[rows, comp] + np.einsum("snij,snj->sni", chol[rows, comp], z)
    if L.Rn:
        mean = draws.normal_zeta()[index][:, None, :]
        sd = np.sqrt(draws.normal_omega()[index])[:, None, :]
        out[..., list(part.normal)] = mean + sd * rng.normal((S, n_per_draw, L.Rn))
    return out


# ---------------------------------------------------------------------------
# Predictive choice distributions


@dataclass(frozen=True)
class PredictiveChoiceDistribution:
    """Predicted choice probabilities per task, keyed by ``(person_id, task_id)``."""

    keys: tuple[tuple[str, object], ...]
    probs: np.ndarray  # (n_tasks, J) padded with zeros for absent alternatives
    n_alternatives: tuple[int, ...]
    n_posterior_draws: int
    n_taste_draws: int

    def __post_init__(self):
        sums = self.probs.sum(axis=1)
        if self.probs.size and np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ShapeError("predictive probabilities do not sum to one")

    def __len__(self) -> int:
        return len(self.keys)

    def index(self) -> dict:
        return {k: i for i, k in enumerate(self.keys)}

    def task_probs(self, key) -> np.ndarray:
        i = self.index()[key]
        return self.probs[i, : self.n_alternatives[i]]


def _task_arrays(data: ChoiceDataset):
    arr = data.arrays
    keys = tuple((p.person_id, t.task_id) for p, t in data.tasks())
    n_alt = tuple(t.n_alternatives for _, t in data.tasks())
    return keys, arr.X, arr.available, n_alt


def predictive_choice_distribution(draws: PosteriorDraws, mixing: MixingSpec, utility: UtilitySpec,
                                   tasks: ChoiceDataset, n_taste_draws: int = 2000,
                                   rng: RandomStream | None = None,
                                   max_posterior_draws: int | None = None) -> PredictiveChoiceDistribution:
    """Monte-Carlo posterior predictive choice probabilities for new decision makers.

    For each retained draw of the population parameters, ``n_taste_draws``
    tastes are simulated from the implied mixing distribution; MNL
    probabilities are averaged over tastes and posterior draws.
    ``max_posterior_draws`` evenly thins the retained draws (default: all).
    """
    draws.check_mixing(mixing)
    if draws.n_draws < 1:
        raise InsufficientDraws("predictive distribution needs at least one retained draw")
    if n_taste_draws < 1:
        raise ShapeError("n_taste_draws must be positive")
    rng = rng or RandomStream(0)
    keys, X, available, n_alt = _task_arrays(tasks)
    n_tasks, J = X.shape[:2]
    avail = None if available.all() else available
    index = _select(draws.n_draws, max_posterior_draws)
    per_draw = n_taste_draws * n_tasks * J
    chunk = max(1, CHUNK_ENTRIES // max(per_draw, 1))
    total = np.zeros((n_tasks, J))
    for start in range(0, index.size, chunk):
        idx = index[start:start + chunk]
        theta = simulate_population_tastes(draws, utility, idx, n_taste_draws, rng).reshape(-1, 1, draws.layout.D)
        v = utilities(utility, theta, X[None])  # (m, n_tasks, J)
        total += np.exp(log_softmax(v, avail)).sum(axis=0)
    probs = total / (index.size * n_taste_draws)
    probs /= probs.sum(axis=1, keepdims=True)
    return PredictiveChoiceDistribution(keys, probs, n_alt, int(index.size), int(n_taste_draws))


# ---------------------------------------------------------------------------
# Metrics


def tvd(p, q) -> float:
    """Total variation distance ``0.5 * sum |p - q|``."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    if p.shape != q.shape or p.ndim != 1:
        raise ShapeError(f"tvd needs two vectors of equal length, got {p.shape} and {q.shape}")
    return float(0.5 * np.abs(p - q).sum())


def tvd_mean(P, Q) -> float:
    """Average TVD over matching rows (tasks)."""
    P = np.asarray(P, dtype=float)
    Q = np.asarray(Q, dtype=float)
    if P.shape != Q.shape or P.ndim != 2:
        raise ShapeError(f"tvd_mean needs equal (tasks, J) arrays, got {P.shape} and {Q.shape}")
    return float(0.5 * np.abs(P - Q).sum(axis=1).mean())


def pointwise_log_lik(draws: PosteriorDraws, data: ChoiceDataset, utility: UtilitySpec) -> np.ndarray:
    """``ln P(y_nt | X_nt, beta_n^(s))`` for every retained draw, shape (S, n_tasks)."""
    like = PanelLikelihood(utility, data.arrays)
    theta = draws.theta()
    if theta.shape[1] != data.n_persons:
        raise ShapeError(f"draws hold {theta.shape[1]} persons, data has {data.n_persons}")
    S = theta.shape[0]
    n_tasks, J = data.arrays.X.shape[:2]
    chunk = max(1, CHUNK_ENTRIES // (n_tasks * J))
    out = np.empty((S, n_tasks))
    for start in range(0, S, chunk):
        out[start:start + chunk] = like.task_log_prob(theta[start:start + chunk])
    return out


def lppd_from_pointwise(ll: np.ndarray) -> float:
    ll = np.asarray(ll, dtype=float)
    return float((logsumexp(ll, axis=0) - math.log(ll.shape[0])).sum())


def lppd_train(draws: PosteriorDraws, data: ChoiceDataset, utility: UtilitySpec) -> float:
    """``sum_nt ln mean_s P(y_nt | beta_n^(s))`` over the training panel."""
    return lppd_from_pointwise(pointwise_log_lik(draws, data, utility))


def lppd_validation(predictive: PredictiveChoiceDistribution, validation: ChoiceDataset) -> float:
    """``sum ln P_hat(observed choice)`` over the validation tasks."""
    index = predictive.index()
    total = 0.0
    for person, task in validation.tasks():
        key = (person.person_id, task.task_id)
        if key not in index:
            raise CoverageError(f"no predictive distribution for person {key[0]!r} task {key[1]!r}")
        p = predictive.probs[index[key], task.chosen]
        total += max(math.log(p) if p > 0 else -math.inf, LOG_PROB_FLOOR)
    return total


@dataclass(frozen=True)
class WaicResult:
    lppd: float
    p_waic: float
    waic: float


def waic_from_pointwise(ll: np.ndarray) -> WaicResult:
    ll = np.asarray(ll, dtype=float)
    if ll.shape[0] < 2:
        raise InsufficientDraws(f"WAIC needs at least 2 retained draws, got {ll.shape[0]}")
    lppd = lppd_from_pointwise(ll)
    p_waic = float(ll.var(axis=0, ddof=1).sum())
    return WaicResult(lppd, p_waic, -2.0 * (lppd - p_waic))


def waic(draws: PosteriorDraws, data: ChoiceDataset, utility: UtilitySpec) -> WaicResult:
    """LPPD, ``p_WAIC`` (sum of unbiased pointwise variances) and
    ``WAIC = -2 (LPPD - p_WAIC)``."""
    if draws.n_draws < 2:
        raise InsufficientDraws(f"WAIC needs at least 2 retained draws, got {draws.n_draws}")
    return waic_from_pointwise(pointwise_log_lik(draws, data, utility))


# ---------------------------------------------------------------------------
# Heterogeneity summaries


@dataclass(frozen=True)
class DensityGrid:
    points: np.ndarray  # (G, R)
    mean: np.ndarray  # (G,)
    lower: np.ndarray
    upper: np.ndarray
    quantiles: tuple[float, float]


def mixture_density_grid(draws: PosteriorDraws, points, quantiles=(0.05, 0.95),
                         max_posterior_draws: int | None = None) -> DensityGrid:
    """Posterior mean and quantile band of ``sum_k pi_k phi(y | zeta_k, Omega_k)``
    at each grid point (mixing-block coordinates)."""
    points = np.asarray(points, dtype=float)
    L = draws.layout
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] == 0:
        raise ShapeError("grid must contain at least one point")
    if points.shape[1] != L.R:
        raise ShapeError(f"grid points have dimension {points.shape[1]}, mixing block has {L.R}")
    index = _select(draws.n_draws, max_posterior_draws)
    G = points.shape[0]
    dens = np.empty((index.size, G))
    chunk = max(1, CHUNK_ENTRIES // max(G * L.K * L.R, 1))
    for start in range(0, index.size, chunk):
        idx = index[start:start + chunk]
        pi, zeta = draws.pi()[idx], draws.zeta()[idx]
        chol = cholesky(draws.omega()[idx], "Omega", relative=True)
        diff = points[None, None, :, :] - zeta[:, :, None, :]  # (s, K, G, R)
        z = np.linalg.solve(chol[:, :, None], diff[..., None])[..., 0]
        log_det = np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)
        logphi = -0.5 * (z**2).sum(-1) - log_det[..., None] - 0.5 * L.R * math.log(2 * math.pi)
        with np.errstate(divide="ignore"):
            dens[start:start + len(idx)] = np.exp(logsumexp(logphi + np.log(pi)[..., None], axis=1))
    lo, hi = np.quantile(dens, quantiles, axis=0)
    return DensityGrid(points, dens.mean(axis=0), lo, hi, tuple(quantiles))


@dataclass(frozen=True)
class HeterogeneitySummary:
    """Posterior predictive taste distribution per parameter.

    ``percentiles`` is (D, 5) at 10/25/50/75/90.  ``mean`` is the posterior
    mean of the population mean, ``mean_sd`` its posterior standard deviation
    and ``mc_se`` the Monte-Carlo error of ``mean`` from the retained draws.
    ``cdf_x``/``cdf`` tabulate the predictive CDF of each parameter.
    """

    names: tuple[str, ...]
    percentiles: np.ndarray
    mean: np.ndarray
    mean_sd: np.ndarray
    mc_se: np.ndarray
    cdf_x: np.ndarray  # (D, n_grid)
    cdf: np.ndarray  # (D, n_grid)


def population_mean(draws: PosteriorDraws, utility: UtilitySpec) -> np.ndarray:
    """Per-draw population mean of the taste distribution, shape (S, D);
    ``sum_k pi_k zeta_k`` on the mixing block (invariant to relabeling)."""
    L = draws.layout
    part = utility.partition
    out = np.empty((draws.n_draws, L.D))
    if L.R:
        out[:, list(part.mixing)] = np.einsum("sk,skr->sr", draws.pi(), draws.zeta())
    if L.Rn:
        out[:, list(part.normal)] = draws.normal_zeta()
    return out


def batch_means_se(x: np.ndarray, chains: np.ndarray, n_batches: int = 10) -> np.ndarray:
    """MC standard error of a posterior mean by batch means within each chain."""
    means = []
    for c in np.unique(chains):
        xc = x[chains == c]
        if xc.shape[0] >= n_batches:
            means += [b.mean(axis=0) for b in np.array_split(xc, n_batches)]
    if len(means) < 2:
        return np.full(x.shape[1:], np.nan)
    means = np.array(means)
    return means.std(axis=0, ddof=1) / math.sqrt(len(means))


def wtp_summary(draws: PosteriorDraws, mixing: MixingSpec, utility: UtilitySpec, n_taste_draws: int = 200,
                rng: RandomStream | None = None, names=None, max_posterior_draws: int | None = 1000,
                n_cdf_points: int = 101) -> HeterogeneitySummary:
    """Percentiles, means and CDFs of the posterior predictive taste distribution."""
    draws.check_mixing(mixing)
    if draws.n_draws < 1:
        raise InsufficientDraws("summary needs at least one retained draw")
    rng = rng or RandomStream(0)
    D = draws.layout.D
    names = tuple(names) if names is not None else tuple(f"theta[{d}]" for d in range(D))
    index = _select(draws.n_draws, max_posterior_draws)
    sims = simulate_population_tastes(draws, utility, index, n_taste_draws, rng).reshape(-1, D)
    pct = np.percentile(sims, PERCENTILES, axis=0).T
    pct = np.maximum.accumulate(pct, axis=1)  # guard against interpolation round-off
    means = population_mean(draws, utility)
    lo, hi = np.percentile(sims, [0.5, 99.5], axis=0)
    cdf_x = np.linspace(lo, hi, n_cdf_points).T
    sorted_sims = np.sort(sims, axis=0)
    cdf = np.stack([np.searchsorted(sorted_sims[:, d], cdf_x[d], side="right") / sims.shape[0]
                    for d in range(D)])
    return HeterogeneitySummary(names, pct, means.mean(axis=0), means.std(axis=0, ddof=1) if means.shape[0] > 1
                                else np.zeros(D), batch_means_se(means, draws.chain_labels), cdf_x, cdf)


# ---------------------------------------------------------------------------
# CSV output


def write_summary_csv(summary: HeterogeneitySummary, path) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", *(f"p{p}" for p in PERCENTILES), "mean", "mean_sd", "mc_se"])
        for d, name in enumerate(summary.names):
            w.writerow([name, *(format_float(x) for x in summary.percentiles[d]), format_float(summary.mean[d]),
                        format_float(summary.mean_sd[d]), format_float(summary.mc_se[d])])
    atomic_write(path, write)


def write_cdf_csv(summary: HeterogeneitySummary, path) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["parameter", "x", "cdf"])
        for d, name in enumerate(summary.names):
            for x, c in zip(summary.cdf_x[d], summary.cdf[d]):
                w.writerow([name, format_float(x), format_float(c)])
    atomic_write(path, write)


def write_density_grid_csv(grid: DensityGrid, path, names=None) -> None:
    R = grid.points.shape[1]
    names = list(names) if names is not None else [f"y{r}" for r in range(R)]
    lo_q, hi_q = grid.quantiles

    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*names, "density_mean", f"density_q{lo_q:g}", f"density_q{hi_q:g}"])
        for i in range(grid.points.shape[0]):
            w.writerow([*(format_float(x) for x in grid.points[i]), format_float(grid.mean[i]),
                        format_float(grid.lower[i]), format_float(grid.upper[i])])
    atomic_write(path, write)
