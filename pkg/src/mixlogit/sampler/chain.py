"""Chain driver: initialization, the per-iteration sweep, retention and
multi-chain orchestration."""

from __future__ import annotations

import hashlib
import logging
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from ..data import ChoiceDataset
from ..errors import ConfigError, MixLogitError, SamplerError
from ..stats import RandomStream, sample_mvn
from ..utility import LINEAR, PanelLikelihood, UtilitySpec
from .draws import DrawLayout, PosteriorDraws
from .model import DPMON, FMON, MVN, MCMCConfig, MixingSpec, ModelPriors, SamplerState, default_priors
from .updates import (adapt_step_size, component_counts, component_factors, stick_weights, update_a,
                      update_alpha_dp, update_assignments, update_beta_mh, update_normal_block,
                      update_omega, update_pi_finite, update_sticks, update_zeta)

log = logging.getLogger(__name__)


def data_hash(data: ChoiceDataset | None) -> str:
    if data is None:
        return ""
    arr = data.arrays
    h = hashlib.sha256()
    for a in (arr.X, arr.available, arr.chosen, arr.person):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


class Model:
    """Mixed logit with a normal / finite-mixture / DP-mixture mixing block.

    ``data=None`` (or ``disable_likelihood``) samples from the prior; then
    ``n_persons`` fixes the number of latent persons.
    """

    def __init__(self, data: ChoiceDataset | None, utility: UtilitySpec, mixing: MixingSpec,
                 priors: ModelPriors | None = None, n_persons: int | None = None,
                 disable_likelihood: bool = False):
        self.utility = utility
        self.mixing = mixing
        part = utility.partition
        self.mix_idx = list(part.mixing)
        self.norm_idx = list(part.normal)
        self.R = len(self.mix_idx)
        self.Rn = len(self.norm_idx)
        self.D = utility.n_params
        self.priors = priors or default_priors(mixing, self.R, self.Rn)
        if self.priors.mixing.dim != self.R:
            raise MixLogitError(f"mixing hyper-priors have dimension {self.priors.mixing.dim}, "
                                f"utility mixing block has {self.R}")
        if self.Rn and (self.priors.normal is None or self.priors.normal.dim != self.Rn):
            raise MixLogitError(f"normal-block hyper-priors must have dimension {self.Rn}")
        self.data = data
        if data is not None:
            self.N = data.n_persons
            self.likelihood = None if disable_likelihood else PanelLikelihood(utility, data.arrays)
        else:
            if n_persons is None:
                raise MixLogitError("n_persons is required without data")
            self.N = int(n_persons)
            self.likelihood = None
        self.layout = DrawLayout(mixing.K, self.R, self.Rn, self.N, self.D, has_alpha=mixing.kind == DPMON)

    # ------------------------------------------------------------------ state

    def person_log_lik(self, theta: np.ndarray) -> np.ndarray:
        if self.likelihood is None:
            return np.zeros(theta.shape[0])
        return self.likelihood.person_log_lik(theta)

    def initial_state(self, rng: RandomStream, rho0: float = 0.1) -> SamplerState:
        K, R, Rn, N = self.mixing.K, self.R, self.Rn, self.N
        zeta = sample_mvn(np.zeros(R), 0.1 * np.eye(R), rng, size=K)
        omega = np.broadcast_to(np.eye(R), (K, R, R)).copy()
        q = rng.generator.integers(0, K, size=N) if K > 1 else np.zeros(N, dtype=np.int64)
        pi = np.full(K, 1.0 / K)
        eta = None
        if self.mixing.kind == DPMON:
            eta = 1.0 / (K - np.arange(K))  # uniform weights, eta_K = 1
            pi = stick_weights(eta)
        theta = np.zeros((N, self.D))
        theta[:, self.mix_idx] = zeta[q]
        nzeta = sample_mvn(np.zeros(Rn), 0.1 * np.eye(Rn), rng) if Rn else np.zeros(0)
        theta[:, self.norm_idx] = nzeta
        alpha = self.mixing.fixed_alpha if self.mixing.fixed_alpha is not None else 1.0
        state = SamplerState(zeta=zeta, omega=omega, a=np.ones((K, R)), pi=pi, q=q.astype(np.int64),
                             theta=theta, eta=eta, alpha=float(alpha), nzeta=nzeta, nomega=np.ones(Rn),
                             na=np.ones(Rn), rho=rho0)
        state.loglik = self.person_log_lik(theta)
        return state

    # ------------------------------------------------------------------ sweep

    def sweep(self, state: SamplerState, rng: RandomStream, factors=None):
        """One Metropolis-within-Gibbs iteration, in place.

        Order: component means, half-t auxiliaries, covariances (and the
        normal block), weights (Dirichlet, or concentration then sticks),
        assignments, person-level Metropolis.  Returns the Cholesky factors
        of the updated covariances for reuse in the next sweep.
        """
        hyper = self.priors.mixing
        K = self.mixing.K
        x = state.theta[:, self.mix_idx]
        if factors is None:
            factors = component_factors(state.omega)
        _, chol_inv, _ = factors
        omega_inv = np.swapaxes(chol_inv, -1, -2) @ chol_inv

        state.zeta = update_zeta(x, state.q, omega_inv, hyper, rng)
        state.a = update_a(omega_inv, hyper, rng)
        state.omega = update_omega(x, state.q, state.zeta, state.a, hyper, rng)
        if self.Rn:
            state.nzeta, state.na, state.nomega = update_normal_block(
                state.theta[:, self.norm_idx], state.nzeta, state.nomega, self.priors.normal, rng)

        if self.mixing.kind == FMON:
            state.pi = update_pi_finite(component_counts(state.q, K), self.mixing.dirichlet_alpha, rng)
        elif self.mixing.kind == DPMON:
            if self.mixing.fixed_alpha is None:
                state.alpha = update_alpha_dp(state.eta, rng, self.mixing.dp_alpha_shape, self.mixing.dp_alpha_rate)
            state.eta, state.pi = update_sticks(component_counts(state.q, K), state.alpha, rng)

        factors = component_factors(state.omega)
        chol, chol_inv, log_det = factors
        if K > 1:
            state.q = update_assignments(x, state.pi, state.zeta, chol_inv, log_det, rng)

        q = state.q
        norm_sd = np.sqrt(state.nomega) if self.Rn else None
        state.theta, state.loglik, accepted = update_beta_mh(
            state.theta, state.loglik, state.rho, rng,
            self.likelihood.person_log_lik if self.likelihood is not None else None,
            self.mix_idx, state.zeta[q], chol[q], chol_inv[q],
            self.norm_idx, state.nzeta, norm_sd)
        state.acceptance = float(accepted.mean())
        state.iteration += 1
        return factors

    def project(self, state: SamplerState) -> np.ndarray:
        return self.layout.pack(state.nzeta, state.nomega, state.pi, state.zeta, state.omega,
                                state.alpha, state.theta, float(state.loglik.sum()))


def _meta(model: Model, config: MCMCConfig) -> dict:
    return {
        "utility": model.utility.to_dict(),
        "mixing": model.mixing.to_dict(),
        "priors": {"mixing": model.priors.mixing.to_dict(),
                   "normal": model.priors.normal.to_dict() if model.priors.normal else None},
        "mcmc": config.to_dict(),
        "data_sha256": data_hash(model.data),
        "param_names": model.utility.param_names(model.data.attribute_names) if model.data else None,
        "person_ids": model.data.person_ids if model.data else None,
    }


def run_chain(data: ChoiceDataset | None, utility: UtilitySpec, mixing: MixingSpec,
              priors: ModelPriors | None, config: MCMCConfig, chain_seed: int | RandomStream = 0,
              *, chain: int = 0, n_persons: int | None = None, progress_every: int = 0) -> PosteriorDraws:
    """Run one chain and return its retained draws.

    Retains every ``thinning``-th state after burn-in, i.e.
    ``floor((n_iterations - n_burnin) / thinning)`` rows.
    """
    model = Model(data, utility, mixing, priors, n_persons=n_persons,
                  disable_likelihood=config.disable_likelihood)
    rng = chain_seed if isinstance(chain_seed, RandomStream) else RandomStream(chain_seed)
    state = model.initial_state(rng, config.rho0)
    if config.backend == "numba":
        return _run_compiled(model, state, rng, config, chain)
    rows = np.empty((config.n_retained, model.layout.n_columns))
    kept = 0
    factors = None
    tic = time.perf_counter()
    for it in range(config.n_iterations):
        try:
            factors = model.sweep(state, rng, factors)
        except (MixLogitError, np.linalg.LinAlgError, FloatingPointError) as exc:
            raise SamplerError(str(exc), iteration=it, chain=chain) from exc
        past_burnin = it >= config.n_burnin
        if not (past_burnin and config.freeze_after_burnin):
            state.rho = adapt_step_size(state.rho, state.acceptance, config.target_acceptance,
                                        config.rho_increment, config.rho_min)
        if past_burnin and (it + 1 - config.n_burnin) % config.thinning == 0:
            rows[kept] = model.project(state)
            kept += 1
        if progress_every and (it + 1) % progress_every == 0:
            log.info("chain %d: iteration %d/%d, rho=%.4f, acceptance=%.3f", chain, it + 1,
                     config.n_iterations, state.rho, state.acceptance)
    meta = _meta(model, config)
    meta["final_rho"] = [state.rho]
    draws = PosteriorDraws(model.layout, [rows[:kept]], meta)
    draws.runtime = time.perf_counter() - tic
    draws.final_state = state
    return draws


def _run_compiled(model: Model, state: SamplerState, rng: RandomStream, config: MCMCConfig,
                  chain: int) -> PosteriorDraws:
    if model.mixing.kind != MVN or model.utility.variant != LINEAR or model.Rn:
        raise ConfigError("the numba backend supports MVN mixing with linear utility only")
    from .compiled import STATUS_OK, mvn_linear_chain, person_starts

    hyper = model.priors.mixing
    if model.data is not None:
        arr = model.data.arrays
        X = np.ascontiguousarray(arr.X[..., list(model.utility.columns)])
        avail, chosen = np.ascontiguousarray(arr.available), arr.chosen.astype(np.int64)
        starts = person_starts(arr.person, model.N)
    else:
        X, avail = np.zeros((0, 2, model.R)), np.ones((0, 2), dtype=bool)
        chosen, starts = np.zeros(0, dtype=np.int64), np.zeros(model.N + 1, dtype=np.int64)
    rows = np.zeros((config.n_retained, model.layout.n_columns))
    status = np.zeros(2, dtype=np.int64)
    zeta, omega = state.zeta[0].copy(), state.omega[0].copy()
    theta, loglik = state.theta.copy(), state.loglik.copy()
    tic = time.perf_counter()
    rho = mvn_linear_chain(rng.generator, X, avail, chosen, starts, hyper.mu0, hyper.Sigma0_inv,
                           hyper.prior_precision_mean, hyper.nu, hyper.inv_A_sq, zeta, omega, theta, loglik,
                           config.rho0, config.n_iterations, config.n_burnin, config.thinning,
                           config.rho_increment, config.rho_min, config.target_acceptance,
                           config.freeze_after_burnin, model.likelihood is not None, rows, status)
    if status[0] != STATUS_OK:
        raise SamplerError("covariance lost positive definiteness", iteration=int(status[1]), chain=chain)
    state.zeta, state.omega, state.theta, state.loglik = zeta[None], omega[None], theta, loglik
    state.rho, state.iteration = float(rho), config.n_iterations
    meta = _meta(model, config)
    meta["final_rho"] = [state.rho]
    draws = PosteriorDraws(model.layout, [rows], meta)
    draws.runtime = time.perf_counter() - tic
    draws.final_state = state
    return draws


def _chain_job(args):
    data, utility, mixing, priors, config, c, n_persons = args
    rng = RandomStream(config.seed).child(c)
    return run_chain(data, utility, mixing, priors, config, rng, chain=c, n_persons=n_persons)


def run_estimation(data: ChoiceDataset | None, utility: UtilitySpec, mixing: MixingSpec,
                   priors: ModelPriors | None, config: MCMCConfig, jobs: int = 1,
                   n_persons: int | None = None) -> PosteriorDraws:
    """Run ``config.n_chains`` chains on independent child streams of
    ``config.seed`` and merge them (chain order preserved)."""
    args = [(data, utility, mixing, priors, config, c, n_persons) for c in range(config.n_chains)]
    tic = time.perf_counter()
    if jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, config.n_chains)) as pool:
            results = list(pool.map(_chain_job, args))
    else:
        results = [_chain_job(a) for a in args]
    meta = dict(results[0].meta)
    meta["final_rho"] = [r.meta["final_rho"][0] for r in results]
    draws = PosteriorDraws(results[0].layout, [r.chains[0] for r in results], meta)
    draws.runtime = time.perf_counter() - tic
    return draws
