"""Random variate generation and densities used by the samplers and generators.

Every sampler draws from a :class:`RandomStream`, a thin wrapper around numpy's
PCG64 bit generator seeded through :class:`numpy.random.SeedSequence`, so the
draw sequence is a pure function of the seed and the call sequence.  Sampling
functions accept stacked parameters where the MCMC code needs them batched.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .errors import DomainError, NonPositiveDefinite

UNIFORM_EPS = 1e-16
# Cholesky pivots (squared) at or below this are treated as singular.
PD_TOL = 1e-10
PD_RTOL = 1e-13
SYMMETRY_TOL = 1e-12
LOG_2PI = math.log(2.0 * math.pi)


class RandomStream:
    """Seedable stream of pseudo-random numbers (PCG64).

    Streams are not thread-safe; give each chain or replication its own
    stream via :meth:`fork`.
    """

    def __init__(self, seed: int = 0, *, _seed_seq: np.random.SeedSequence | None = None):
        self.seed = int(seed) % 2**64
        self._seed_seq = _seed_seq if _seed_seq is not None else np.random.SeedSequence(self.seed)
        self.generator = np.random.Generator(np.random.PCG64(self._seed_seq))

    def fork(self, n: int) -> list["RandomStream"]:
        """Return ``n`` statistically independent child streams."""
        return [RandomStream(self.seed, _seed_seq=child) for child in self._seed_seq.spawn(n)]

    def child(self, *key: int) -> "RandomStream":
        """Deterministic child stream addressed by an integer key path.

        Unlike :meth:`fork` this does not depend on how many children were
        spawned before, so ``child(3)`` is the same stream in every process.
        """
        seq = np.random.SeedSequence(self._seed_seq.entropy,
                                     spawn_key=tuple(self._seed_seq.spawn_key) + tuple(int(k) for k in key))
        return RandomStream(self.seed, _seed_seq=seq)

    def uniform(self, size=None):
        """Uniform(0, 1) draws clamped to ``[1e-16, 1 - 1e-16]``."""
        u = self.generator.random(size)
        return np.clip(u, UNIFORM_EPS, 1.0 - UNIFORM_EPS)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def standard_gamma(self, shape, size=None):
        return self.generator.standard_gamma(shape, size)

    def __repr__(self) -> str:
        return f"RandomStream(seed={self.seed}, spawn_key={tuple(self._seed_seq.spawn_key)})"


def as_stream(rng) -> RandomStream:
    if isinstance(rng, RandomStream):
        return rng
    if rng is None:
        return RandomStream(0)
    return RandomStream(int(rng))


# ---------------------------------------------------------------------------
# Linear algebra helpers


def cholesky(cov, name: str = "cov", relative: bool = False) -> np.ndarray:
    """Lower Cholesky factor of a (stack of) covariance matrices.

    Raises :class:`NonPositiveDefinite` naming ``name`` when a matrix is not
    symmetric, the factorization fails, or a squared pivot is ``<= PD_TOL``.
    With ``relative=True`` the pivot test is ``pivot^2 > PD_RTOL * cov_ii``
    instead, so legitimately tiny but well-conditioned covariances (e.g. deep
    excursions of a sampled variance) are accepted.
    """
    cov = np.asarray(cov, dtype=float)
    if cov.ndim < 2 or cov.shape[-1] != cov.shape[-2]:
        raise NonPositiveDefinite(f"{name}: expected square matrix, got shape {cov.shape}")
    asym = np.abs(cov - np.swapaxes(cov, -1, -2))
    scale = np.maximum(1.0, np.abs(cov).max(axis=(-1, -2), keepdims=True))
    if np.any(asym > SYMMETRY_TOL * scale):
        raise NonPositiveDefinite(f"{name} is not symmetric")
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise NonPositiveDefinite(f"{name} is not positive definite") from exc
    pivots = np.diagonal(chol, axis1=-2, axis2=-1)
    if relative:
        bad = ~(pivots**2 > PD_RTOL * np.diagonal(cov, axis1=-2, axis2=-1)) | ~(pivots > 0)
    else:
        bad = pivots**2 <= PD_TOL
    if not np.all(np.isfinite(chol)) or np.any(bad):
        raise NonPositiveDefinite(f"{name} is not positive definite (pivot below tolerance)")
    return chol


def chol_inverse(chol: np.ndarray) -> np.ndarray:
    """Inverse of a (stack of) lower-triangular factors."""
    eye = np.broadcast_to(np.eye(chol.shape[-1]), chol.shape)
    return np.linalg.solve(chol, eye)


# ---------------------------------------------------------------------------
# Samplers


def sample_mvn(mean, cov, rng: RandomStream, size: int | None = None) -> np.ndarray:
    """Draw from N(mean, cov) as ``mean + chol(cov) z``."""
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    chol = cholesky(np.atleast_2d(cov), "cov")
    if chol.shape[-1] != mean.shape[-1]:
        raise DomainError(f"mean has length {mean.shape[-1]} but cov is {chol.shape[-1]}x{chol.shape[-1]}")
    if size is None:
        return mean + chol @ rng.normal(mean.shape[-1])
    z = rng.normal((size, mean.shape[-1]))
    return mean + z @ chol.T


def sample_gamma(shape, *, rate=None, scale=None, rng: RandomStream, size=None):
    """Gamma draw; exactly one of ``rate`` or ``scale`` must be given by name."""
    if (rate is None) == (scale is None):
        raise DomainError("sample_gamma needs exactly one of rate= or scale=")
    shape = np.asarray(shape, dtype=float)
    second = np.asarray(rate if rate is not None else scale, dtype=float)
    if np.any(~(shape > 0)) or np.any(~(second > 0)):
        raise DomainError(f"gamma parameters must be positive (shape={shape}, "
                          f"{'rate' if rate is not None else 'scale'}={second})")
    if size is None:
        size = np.broadcast(shape, second).shape or None
    g = rng.standard_gamma(shape, size)
    out = g / second if rate is not None else g * second
    return float(out) if np.ndim(out) == 0 else out


def sample_beta(a, b, rng: RandomStream, size=None):
    """Beta(a, b) draw, clamped into the open unit interval."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(~(a > 0)) or np.any(~(b > 0)):
        raise DomainError(f"beta parameters must be positive (a={a}, b={b})")
    if size is None:
        size = np.broadcast(a, b).shape or None
    x = rng.generator.beta(a, b, size)
    x = np.clip(x, UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return float(x) if np.ndim(x) == 0 else x


def sample_dirichlet(concentration, rng: RandomStream) -> np.ndarray:
    concentration = np.atleast_1d(np.asarray(concentration, dtype=float))
    if concentration.ndim != 1 or np.any(~(concentration > 0)):
        raise DomainError(f"dirichlet concentration must be a positive vector, got {concentration}")
    if concentration.size == 1:
        return np.ones(1)
    w = rng.generator.dirichlet(concentration)
    return close_simplex(w / w.sum())


def close_simplex(w: np.ndarray) -> np.ndarray:
    """Nudge the largest entry of a (near-)simplex so the correctly rounded
    sum ``math.fsum(w)`` is exactly 1.  Modifies ``w`` in place."""
    k = int(np.argmax(w))
    for _ in range(4):
        r = 1.0 - math.fsum(w)
        if r == 0.0:
            break
        w[k] += r
    return w


def _check_simplex(probs: np.ndarray, tol: float) -> None:
    if np.any(probs < 0) or np.any(np.abs(probs.sum(axis=-1) - 1.0) > tol):
        raise DomainError(f"probabilities must be non-negative and sum to 1 (tol {tol:g})")


def sample_categorical(probs, rng: RandomStream) -> int:
    """Zero-based index drawn by inverting the cumulative sum at one uniform."""
    probs = np.asarray(probs, dtype=float)
    _check_simplex(probs, 1e-9)
    u = rng.uniform()
    cdf = np.cumsum(probs)
    return int(min(np.searchsorted(cdf, u * cdf[-1], side="right"), probs.size - 1))


def sample_categorical_rows(probs: np.ndarray, rng: RandomStream) -> np.ndarray:
    """Row-wise categorical draws for a (N, K) matrix of probabilities.

    Rows need not be normalized; each is inverted against its own total.
    """
    cdf = np.cumsum(probs, axis=1)
    u = rng.uniform(probs.shape[0]) * cdf[:, -1]
    idx = (cdf <= u[:, None]).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def gumbel_from_uniform(u):
    u = np.clip(u, UNIFORM_EPS, 1.0 - UNIFORM_EPS)
    return -np.log(-np.log(u))


def sample_gumbel(rng: RandomStream, size=None):
    """Standard Gumbel(0, 1) via ``-ln(-ln u)``."""
    g = gumbel_from_uniform(rng.uniform(size))
    return float(g) if np.ndim(g) == 0 else g


def snl_density(x, mu: float, sigma: float, lam: float):
    """Skew-normal-logistic density ``2 phi(x | mu, sigma) G(lam (x - mu))``."""
    x = np.asarray(x, dtype=float)
    z = (x - mu) / sigma
    phi = np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))
    return 2.0 * phi * expit(lam * (x - mu))


def sample_snl(mu: float, sigma: float, lam: float, rng: RandomStream, size=None):
    """Skew-normal-logistic draws by rejection from the N(mu, sigma^2) envelope.

    A proposal ``x`` is kept with probability ``G(lam (x - mu))``; the
    acceptance rate is 1/2 for every ``lam`` by symmetry of ``G``.
    """
    if not sigma > 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    n = 1 if size is None else int(np.prod(size))
    out = np.empty(n)
    filled = 0
    while filled < n:
        batch = max(16, 2 * (n - filled) + 8)
        x = mu + sigma * rng.normal(batch)
        keep = x[rng.uniform(batch) < expit(lam * (x - mu))]
        take = min(keep.size, n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    if size is None:
        return float(out[0])
    return out.reshape(size)


def sample_inverse_wishart(df, scale, rng: RandomStream) -> np.ndarray:
    """Inverse-Wishart draw(s), mean ``scale / (df - dim - 1)``.

    Bartlett construction: with ``scale = U U'`` and ``T`` the lower Bartlett
    factor of a standard Wishart(df, I), ``U T^{-T}`` is a square root of the
    inverse-Wishart draw.  ``scale`` may be a stack ``(K, R, R)`` with ``df``
    a scalar or a length-K vector.
    """
    scale = np.asarray(scale, dtype=float)
    single = scale.ndim == 2
    if single:
        scale = scale[None]
    K, R = scale.shape[0], scale.shape[-1]
    df = np.broadcast_to(np.asarray(df, dtype=float), (K,))
    if np.any(~(df > R - 1)):
        raise DomainError(f"inverse-Wishart df must exceed dim - 1 = {R - 1}, got {df}")
    U = cholesky(scale, "inverse-Wishart scale", relative=True)
    # chi-square(df - i) for i = 0..R-1 on the diagonal
    shapes = 0.5 * (df[:, None] - np.arange(R)[None, :])
    T = np.zeros((K, R, R))
    idx = np.arange(R)
    T[:, idx, idx] = np.sqrt(2.0 * rng.standard_gamma(shapes))
    if R > 1:
        lo = np.tril_indices(R, -1)
        T[:, lo[0], lo[1]] = rng.normal((K, lo[0].size))
    F = U @ np.swapaxes(chol_inverse(T), -1, -2)
    omega = F @ np.swapaxes(F, -1, -2)
    omega = 0.5 * (omega + np.swapaxes(omega, -1, -2))
    return omega[0] if single else omega


# ---------------------------------------------------------------------------
# Densities


def log_density_mvn(x, mean, cov) -> np.ndarray | float:
    """Exact multivariate normal log-density; ``x`` may carry leading batch axes."""
    x = np.asarray(x, dtype=float)
    mean = np.asarray(mean, dtype=float)
    chol = cholesky(np.atleast_2d(cov), "cov")
    R = chol.shape[-1]
    diff = np.atleast_1d(x - mean)
    if diff.shape[-1] != R:
        raise DomainError(f"dimension mismatch: x has {diff.shape[-1]}, cov has {R}")
    z = np.linalg.solve(chol, diff.reshape(-1, R).T).T
    out = (-0.5 * R * LOG_2PI - np.log(np.diagonal(chol)).sum()
           - 0.5 * np.einsum("ij,ij->i", z, z))
    out = out.reshape(diff.shape[:-1])
    return float(out) if out.ndim == 0 else out


def log_density_mvn_chol(diff: np.ndarray, chol_inv: np.ndarray, log_det_chol) -> np.ndarray:
    """Log-density from precomputed inverse Cholesky factors.

    ``diff`` is ``(..., R)``, ``chol_inv`` broadcastable ``(..., R, R)`` and
    ``log_det_chol`` the sum of log pivots, broadcastable to ``diff.shape[:-1]``.
    """
    z = np.einsum("...ij,...j->...i", chol_inv, diff)
    R = diff.shape[-1]
    return -0.5 * R * LOG_2PI - log_det_chol - 0.5 * np.einsum("...i,...i->...", z, z)
