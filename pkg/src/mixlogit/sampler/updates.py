"""Full-conditional updates of the Metropolis-within-Gibbs sweep.

Each update takes the quantities it conditions on and returns fresh draws;
the chain driver owns the state.  Component-level updates are batched over
the K mixture components (MVN is the K = 1 case with ``q = 0``).
Assignments ``q`` are zero-based.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from ..stats import (RandomStream, chol_inverse, cholesky, close_simplex, sample_beta, sample_dirichlet,
                     sample_gamma, sample_inverse_wishart)
from .model import HyperPriors

log = logging.getLogger(__name__)

STICK_CLAMP = 1.0 - 1e-12


def component_counts(q: np.ndarray, K: int) -> np.ndarray:
    return np.bincount(q, minlength=K)


def component_sums(x: np.ndarray, q: np.ndarray, K: int) -> np.ndarray:
    return np.stack([np.bincount(q, weights=x[:, r], minlength=K) for r in range(x.shape[1])], axis=1)


def update_zeta(x: np.ndarray, q: np.ndarray, omega_inv: np.ndarray, hyper: HyperPriors,
                rng: RandomStream) -> np.ndarray:
    """Component means from N(mu_k, S_k) with
    ``S_k = (Sigma0^-1 + c_k Omega_k^-1)^-1`` and
    ``mu_k = S_k (Sigma0^-1 mu0 + Omega_k^-1 sum_{q_n = k} x_n)``.

    Empty components draw from the prior N(mu0, Sigma0).
    """
    K, R = omega_inv.shape[0], omega_inv.shape[-1]
    counts = component_counts(q, K)
    sums = component_sums(x, q, K)
    precision = hyper.Sigma0_inv[None] + counts[:, None, None] * omega_inv
    b = hyper.prior_precision_mean[None] + np.einsum("krs,ks->kr", omega_inv, sums)
    L_inv = chol_inverse(cholesky(precision, "zeta conditional precision", relative=True))
    L_inv_T = np.swapaxes(L_inv, -1, -2)
    # mean = L^-T L^-1 b; draw = L^-T (L^-1 b + z)
    w = np.einsum("krs,ks->kr", L_inv, b) + rng.normal((K, R))
    return np.einsum("krs,ks->kr", L_inv_T, w)


def update_a(omega_inv: np.ndarray, hyper: HyperPriors, rng: RandomStream) -> np.ndarray:
    """Half-t auxiliaries ``a_kr ~ Gamma((nu + R)/2, rate = 1/A_r^2 + nu (Omega_k^-1)_rr)``."""
    R = omega_inv.shape[-1]
    diag = np.diagonal(omega_inv, axis1=-2, axis2=-1)
    rate = hyper.inv_A_sq[None, :] + hyper.nu * diag
    return sample_gamma(np.full(rate.shape, 0.5 * (hyper.nu + R)), rate=rate, rng=rng)


def scatter(x: np.ndarray, q: np.ndarray, zeta: np.ndarray) -> np.ndarray:
    """Per-component scatter ``sum_{q_n = k} (x_n - zeta_k)(x_n - zeta_k)'``, shape (K, R, R)."""
    K, R = zeta.shape
    d = x - zeta[q]
    out = np.empty((K, R, R))
    for r in range(R):
        for s in range(r, R):
            out[:, r, s] = np.bincount(q, weights=d[:, r] * d[:, s], minlength=K)
            out[:, s, r] = out[:, r, s]
    return out


def update_omega(x: np.ndarray, q: np.ndarray, zeta: np.ndarray, a: np.ndarray, hyper: HyperPriors,
                 rng: RandomStream) -> np.ndarray:
    """Component covariances ``IW(nu + c_k + R - 1, 2 nu diag(a_k) + scatter_k)``."""
    K, R = zeta.shape
    counts = component_counts(q, K)
    S = scatter(x, q, zeta)
    idx = np.arange(R)
    S[:, idx, idx] += 2.0 * hyper.nu * a
    return sample_inverse_wishart(hyper.nu + counts + R - 1, S, rng)


def update_pi_finite(counts: np.ndarray, alpha: float, rng: RandomStream) -> np.ndarray:
    """Mixture weights ``pi ~ Dirichlet(alpha + c)``."""
    return sample_dirichlet(alpha + np.asarray(counts, dtype=float), rng)


def update_assignments(x: np.ndarray, pi: np.ndarray, zeta: np.ndarray, chol_inv: np.ndarray,
                       log_det: np.ndarray, rng: RandomStream) -> np.ndarray:
    """Draw ``q_n`` with probabilities proportional to ``pi_k phi(x_n | zeta_k, Omega_k)``.

    ``chol_inv``/``log_det`` are the inverse Cholesky factors of the component
    covariances and the sums of their log pivots.
    """
    with np.errstate(divide="ignore"):
        log_pi = np.log(pi)
    diff = x[:, None, :] - zeta[None, :, :]
    z = np.einsum("kij,nkj->nki", chol_inv, diff)
    logp = log_pi[None, :] - log_det[None, :] - 0.5 * np.einsum("nki,nki->nk", z, z)
    m = logp.max(axis=1, keepdims=True)
    p = np.exp(logp - m)
    q = _categorical(p, rng)
    bad = ~np.isfinite(p.sum(axis=1)) | ~np.isfinite(m[:, 0])
    if bad.any():
        log.warning("assignment probabilities degenerate for %d persons; using argmax", int(bad.sum()))
        q[bad] = np.nanargmax(np.where(np.isnan(logp[bad]), -np.inf, logp[bad]), axis=1)
    return q


def _categorical(p: np.ndarray, rng: RandomStream) -> np.ndarray:
    cdf = np.cumsum(p, axis=1)
    u = rng.uniform(p.shape[0]) * cdf[:, -1]
    return np.minimum((cdf <= u[:, None]).sum(axis=1), p.shape[1] - 1)


def update_alpha_dp(eta: np.ndarray, rng: RandomStream, shape0: float = 2.0, rate0: float = 2.0) -> float:
    """Concentration ``alpha ~ Gamma(shape0 + K - 1, rate = rate0 - sum_{k<K} ln(1 - eta_k))``."""
    K = eta.size
    sticks = np.minimum(eta[: K - 1], STICK_CLAMP)
    rate = rate0 - np.log1p(-sticks).sum()
    return float(sample_gamma(shape0 + K - 1, rate=rate, rng=rng))


def stick_weights(eta: np.ndarray) -> np.ndarray:
    """``pi_k = eta_k prod_{l<k} (1 - eta_l)``; sums to one when ``eta_K = 1``
    (closed exactly with :func:`close_simplex`)."""
    remaining = np.concatenate(([1.0], np.cumprod(1.0 - eta[:-1])))
    w = eta * remaining
    return close_simplex(w) if eta[-1] == 1.0 else w


def update_sticks(counts: np.ndarray, alpha: float, rng: RandomStream) -> tuple[np.ndarray, np.ndarray]:
    """Truncated stick-breaking update:
    ``eta_k ~ Beta(1 + c_k, alpha + sum_{j>k} c_j)`` for k < K, ``eta_K = 1``."""
    counts = np.asarray(counts, dtype=float)
    K = counts.size
    tail = np.concatenate((np.cumsum(counts[::-1])[::-1][1:], [0.0]))
    eta = np.ones(K)
    eta[: K - 1] = sample_beta(1.0 + counts[: K - 1], alpha + tail[: K - 1], rng)
    return eta, stick_weights(eta)


def adapt_step_size(rho: float, mean_acceptance: float, target: float = 0.3,
                    increment: float = 0.001, rho_min: float = 1e-4) -> float:
    """Shrink ``rho`` when acceptance is below target, grow it when above."""
    if mean_acceptance < target:
        rho -= increment
    elif mean_acceptance > target:
        rho += increment
    return max(rho_min, rho)


def mh_accept(log_ratio: np.ndarray, rng: RandomStream) -> np.ndarray:
    """Standard Metropolis rule: accept iff ``u <= min(1, r)``; non-finite ratios reject."""
    u = rng.uniform(log_ratio.shape)
    with np.errstate(invalid="ignore"):
        return np.isfinite(log_ratio) & (np.log(u) <= log_ratio)


def component_factors(omega: np.ndarray, name: str = "Omega") -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cholesky factors, their inverses and log-determinant halves of (K, R, R) covariances."""
    chol = cholesky(omega, name, relative=True)
    chol_inv = chol_inverse(chol)
    log_det = np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
    return chol, chol_inv, log_det


def update_beta_mh(theta: np.ndarray, loglik: np.ndarray, rho: float, rng: RandomStream,
                   person_log_lik, mix_idx, mix_mean, mix_chol, mix_chol_inv,
                   norm_idx=(), norm_mean=None, norm_sd=None):
    """Random-walk Metropolis for every person in one joint proposal.

    Proposal ``theta + sqrt(rho) L z`` with ``L`` block diagonal: the
    person's component factor ``chol(Omega_{q_n})`` on the mixing block and
    the normal-block standard deviations.  ``mix_mean``/``mix_chol``/
    ``mix_chol_inv`` are already gathered per person, shapes (N, R) and
    (N, R, R).  ``person_log_lik(theta)`` returns (N,) log-likelihoods, or is
    ``None`` for a flat likelihood.

    Returns ``(theta, loglik, accepted)``.
    """
    N, D = theta.shape
    mix_idx = list(mix_idx)
    norm_idx = list(norm_idx)
    z = rng.normal((N, D))
    step = np.empty((N, D))
    scale = math.sqrt(rho)
    if mix_idx:
        step[:, mix_idx] = np.einsum("nij,nj->ni", mix_chol, z[:, mix_idx])
    if norm_idx:
        step[:, norm_idx] = norm_sd * z[:, norm_idx]
    proposal = theta + scale * step

    def log_prior(t):
        lp = np.zeros(N)
        if mix_idx:
            w = np.einsum("nij,nj->ni", mix_chol_inv, t[:, mix_idx] - mix_mean)
            lp -= 0.5 * np.einsum("ni,ni->n", w, w)
        if norm_idx:
            w = (t[:, norm_idx] - norm_mean) / norm_sd
            lp -= 0.5 * np.einsum("ni,ni->n", w, w)
        return lp

    if person_log_lik is None:
        ll_prop = np.zeros(N)
    else:
        with np.errstate(over="ignore", invalid="ignore"):
            ll_prop = person_log_lik(proposal)
    log_ratio = ll_prop + log_prior(proposal) - loglik - log_prior(theta)
    accepted = mh_accept(log_ratio, rng)
    nonfinite = ~np.isfinite(ll_prop)
    if nonfinite.any():
        log.debug("auto-rejected %d non-finite proposals", int(nonfinite.sum()))
    theta = np.where(accepted[:, None], proposal, theta)
    loglik = np.where(accepted, ll_prop, loglik)
    return theta, loglik, accepted


def update_normal_block(x: np.ndarray, zeta: np.ndarray, omega: np.ndarray, hyper: HyperPriors,
                        rng: RandomStream) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gibbs updates for independent normal parameters with diagonal covariance.

    Each coordinate is its own one-dimensional hierarchy with a half-t prior on
    its standard deviation.  ``omega`` holds the variances.  Returns
    ``(zeta, a, omega)``; ``hyper.Sigma0`` must be diagonal.
    """
    N, R = x.shape
    prior_var = np.diag(hyper.Sigma0)
    precision = 1.0 / prior_var + N / omega
    mean = (hyper.mu0 / prior_var + x.sum(axis=0) / omega) / precision
    zeta = mean + rng.normal(R) / np.sqrt(precision)
    # a and Omega with R = 1 per coordinate
    a = sample_gamma(np.full(R, 0.5 * (hyper.nu + 1.0)), rate=hyper.inv_A_sq + hyper.nu / omega, rng=rng)
    ss = ((x - zeta) ** 2).sum(axis=0)
    scale = (2.0 * hyper.nu * a + ss)[:, None, None]
    omega = sample_inverse_wishart(np.full(R, hyper.nu + N), scale, rng)[:, 0, 0]
    return zeta, a, omega
