"""Compiled (numba) chain for MVN mixing with linear-in-parameters utility.

Same sweep as :class:`~mixlogit.sampler.chain.Model` for the one-component
case and the same order of random draws from the shared PCG64 generator, so
early iterations agree with the numpy path to round-off.  Intended for
problems where per-call numpy overhead dominates (few persons, many
iterations).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

from ..utility import LOG_PROB_FLOOR

UNIFORM_EPS = 1e-16
PD_RTOL = 1e-13  # same relative pivot test as the numpy path

STATUS_OK = 0
STATUS_NOT_PD = 1


@njit(cache=True)
def _chol(a, out):
    """Lower Cholesky factor into ``out``; False unless every squared pivot
    exceeds ``PD_RTOL`` times its diagonal entry."""
    R = a.shape[0]
    for i in range(R):
        for j in range(i + 1):
            s = a[i, j]
            for k in range(j):
                s -= out[i, k] * out[j, k]
            if i == j:
                if not (s > PD_RTOL * a[i, i] and s > 0.0):
                    return False
                out[i, i] = math.sqrt(s)
            else:
                out[i, j] = s / out[j, j]
        for j in range(i + 1, R):
            out[i, j] = 0.0
    return True


@njit(cache=True)
def _tri_inv(L, out):
    """Inverse of a lower-triangular matrix."""
    R = L.shape[0]
    for j in range(R):
        for i in range(R):
            out[i, j] = 0.0
        out[j, j] = 1.0 / L[j, j]
        for i in range(j + 1, R):
            s = 0.0
            for k in range(j, i):
                s -= L[i, k] * out[k, j]
            out[i, j] = s / L[i, i]


@njit(cache=True)
def _person_loglik(theta_n, X, avail, chosen, t0, t1, v):
    J = X.shape[1]
    R = X.shape[2]
    total = 0.0
    for t in range(t0, t1):
        m = -np.inf
        for j in range(J):
            s = 0.0
            for r in range(R):
                s += X[t, j, r] * theta_n[r]
            v[j] = s if avail[t, j] else -np.inf
            if v[j] > m or math.isnan(v[j]):
                m = v[j]
        if math.isnan(m):
            return np.nan
        if not math.isfinite(m):
            m = 0.0
        z = 0.0
        for j in range(J):
            z += math.exp(v[j] - m)
        lp = (v[chosen[t]] - m) - math.log(z)
        if math.isnan(lp):
            return np.nan
        total += max(lp, LOG_PROB_FLOOR)
    return total


@njit(cache=True)
def _uniform(gen):
    u = gen.random()
    return min(max(u, UNIFORM_EPS), 1.0 - UNIFORM_EPS)


@njit(cache=True)
def mvn_linear_chain(gen, X, avail, chosen, starts, mu0, Sigma0_inv, prec_mean, nu, inv_A_sq,
                     zeta, omega, theta, loglik, rho, n_iter, n_burn, thin, rho_inc, rho_min, target,
                     freeze, use_lik, out, status):
    """Run the chain in place; retained rows go to ``out``.

    Returns the final step size.  ``status`` receives ``(code, iteration)``;
    on a factorization failure the chain stops at that iteration.
    """
    N, R = theta.shape
    J = X.shape[1]
    L = np.zeros((R, R))
    Linv = np.zeros((R, R))
    omega_inv = np.zeros((R, R))
    prec = np.zeros((R, R))
    b = np.zeros(R)
    w = np.zeros(R)
    a = np.zeros(R)
    S = np.zeros((R, R))
    T = np.zeros((R, R))
    Tinv = np.zeros((R, R))
    F = np.zeros((R, R))
    U = np.zeros((R, R))
    z = np.zeros((N, R))
    prop = np.zeros(R)
    v = np.zeros(J)
    kept = 0
    if not _chol(omega, L):
        status[0] = STATUS_NOT_PD
        status[1] = 0
        return rho
    _tri_inv(L, Linv)
    for it in range(n_iter):
        # Omega^-1 = Linv' Linv
        for i in range(R):
            for j in range(R):
                s = 0.0
                for k in range(R):
                    s += Linv[k, i] * Linv[k, j]
                omega_inv[i, j] = s
        # zeta | theta, Omega
        for r in range(R):
            b[r] = 0.0
        for n in range(N):
            for r in range(R):
                b[r] += theta[n, r]
        sums = b.copy()
        for i in range(R):
            s = prec_mean[i]
            for j in range(R):
                s += omega_inv[i, j] * sums[j]
                prec[i, j] = Sigma0_inv[i, j] + N * omega_inv[i, j]
            b[i] = s
        if not _chol(prec, T):
            status[0] = STATUS_NOT_PD
            status[1] = it
            return rho
        _tri_inv(T, Tinv)
        for i in range(R):
            s = 0.0
            for j in range(R):
                s += Tinv[i, j] * b[j]
            w[i] = s + gen.standard_normal()
        for i in range(R):
            s = 0.0
            for j in range(R):
                s += Tinv[j, i] * w[j]
            zeta[i] = s
        # half-t auxiliaries
        for r in range(R):
            a[r] = gen.standard_gamma(0.5 * (nu + R)) / (inv_A_sq[r] + nu * omega_inv[r, r])
        # Omega | theta, zeta, a  ~  IW(nu + N + R - 1, 2 nu diag(a) + scatter)
        for i in range(R):
            for j in range(R):
                S[i, j] = 0.0
        for n in range(N):
            for i in range(R):
                di = theta[n, i] - zeta[i]
                for j in range(R):
                    S[i, j] += di * (theta[n, j] - zeta[j])
        for r in range(R):
            S[r, r] += 2.0 * nu * a[r]
        if not _chol(S, U):
            status[0] = STATUS_NOT_PD
            status[1] = it
            return rho
        df = nu + N + R - 1
        for i in range(R):
            for j in range(R):
                T[i, j] = 0.0
            T[i, i] = math.sqrt(2.0 * gen.standard_gamma(0.5 * (df - i)))
        for i in range(1, R):
            for j in range(i):
                T[i, j] = gen.standard_normal()
        _tri_inv(T, Tinv)
        for i in range(R):
            for j in range(R):
                s = 0.0
                for k in range(R):
                    s += U[i, k] * Tinv[j, k]
                F[i, j] = s
        for i in range(R):
            for j in range(R):
                s = 0.0
                for k in range(R):
                    s += F[i, k] * F[j, k]
                omega[i, j] = s
        for i in range(R):
            for j in range(i):
                avg = 0.5 * (omega[i, j] + omega[j, i])
                omega[i, j] = avg
                omega[j, i] = avg
        if not _chol(omega, L):
            status[0] = STATUS_NOT_PD
            status[1] = it
            return rho
        _tri_inv(L, Linv)
        # person-level random-walk Metropolis
        for n in range(N):
            for r in range(R):
                z[n, r] = gen.standard_normal()
        scale = math.sqrt(rho)
        n_acc = 0
        for n in range(N):
            for i in range(R):
                s = 0.0
                for j in range(i + 1):
                    s += L[i, j] * z[n, j]
                prop[i] = theta[n, i] + scale * s
            lp_prop = 0.0
            lp_cur = 0.0
            for i in range(R):
                sp = 0.0
                sc = 0.0
                for j in range(i + 1):
                    sp += Linv[i, j] * (prop[j] - zeta[j])
                    sc += Linv[i, j] * (theta[n, j] - zeta[j])
                lp_prop -= 0.5 * sp * sp
                lp_cur -= 0.5 * sc * sc
            ll_prop = _person_loglik(prop, X, avail, chosen, starts[n], starts[n + 1], v) if use_lik else 0.0
            log_ratio = ll_prop + lp_prop - loglik[n] - lp_cur
            u = _uniform(gen)
            if math.isfinite(log_ratio) and math.log(u) <= log_ratio:
                for r in range(R):
                    theta[n, r] = prop[r]
                loglik[n] = ll_prop
                n_acc += 1
        acc = n_acc / N
        past = it >= n_burn
        if not (past and freeze):
            if acc < target:
                rho -= rho_inc
            elif acc > target:
                rho += rho_inc
            rho = max(rho_min, rho)
        if past and (it + 1 - n_burn) % thin == 0:
            # layout: pi, zeta, omega, theta, loglik
            c = 0
            out[kept, c] = 1.0
            c += 1
            for r in range(R):
                out[kept, c] = zeta[r]
                c += 1
            for i in range(R):
                for j in range(R):
                    out[kept, c] = omega[i, j]
                    c += 1
            tot = 0.0
            for n in range(N):
                for r in range(R):
                    out[kept, c] = theta[n, r]
                    c += 1
                tot += loglik[n]
            out[kept, c] = tot
            kept += 1
    status[0] = STATUS_OK
    status[1] = n_iter
    return rho


def person_starts(person: np.ndarray, n_persons: int) -> np.ndarray:
    """Task offsets per person; tasks must be grouped by person."""
    if np.any(np.diff(person) < 0):
        raise ValueError("tasks must be grouped by person")
    return np.searchsorted(person, np.arange(n_persons + 1)).astype(np.int64)
