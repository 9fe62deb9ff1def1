"""Configuration and state containers for the Metropolis-within-Gibbs sampler."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from functools import cached_property

import numpy as np

from ..errors import ConfigError
from ..stats import cholesky

MVN = "mvn"
FMON = "fmon"
DPMON = "dpmon"
MIXING_KINDS = (MVN, FMON, DPMON)
DEFAULT_K = {MVN: 1, FMON: 2, DPMON: 100}
BACKENDS = ("numpy", "numba")


@dataclass(frozen=True, eq=False)
class HyperPriors:
    """Normal prior N(mu0, Sigma0) on component means and Huang's half-t prior
    (shape nu, scales A) on component covariances."""

    mu0: np.ndarray
    Sigma0: np.ndarray
    nu: float = 2.0
    A: np.ndarray = None

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        R = mu0.size
        Sigma0 = np.asarray(self.Sigma0, dtype=float).reshape(R, R)
        A = np.broadcast_to(np.asarray(1000.0 if self.A is None else self.A, dtype=float), (R,)).copy()
        if not self.nu > 0:
            raise ConfigError(f"nu must be positive, got {self.nu}")
        if np.any(A <= 0):
            raise ConfigError("half-t scales A must be positive")
        cholesky(Sigma0, "Sigma0")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "Sigma0", Sigma0)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "nu", float(self.nu))

    @property
    def dim(self) -> int:
        return self.mu0.size

    @cached_property
    def Sigma0_inv(self) -> np.ndarray:
        return np.linalg.inv(self.Sigma0)

    @cached_property
    def prior_precision_mean(self) -> np.ndarray:
        return self.Sigma0_inv @ self.mu0

    @cached_property
    def inv_A_sq(self) -> np.ndarray:
        return self.A**-2

    @classmethod
    def default(cls, R: int, variance: float = 100.0, nu: float = 2.0, A: float = 1000.0) -> "HyperPriors":
        return cls(np.zeros(R), variance * np.eye(R), nu, np.full(R, A))

    def to_dict(self) -> dict:
        return {"mu0": self.mu0.tolist(), "Sigma0": self.Sigma0.tolist(), "nu": self.nu, "A": self.A.tolist()}

    @classmethod
    def from_dict(cls, d: dict, R: int) -> "HyperPriors":
        d = dict(d)
        unknown = set(d) - {"mu0", "Sigma0", "nu", "A"}
        if unknown:
            raise ConfigError(f"unknown hyper-prior keys: {sorted(unknown)}")
        mu0 = np.broadcast_to(np.asarray(d.get("mu0", 0.0), dtype=float), (R,))
        S = np.asarray(d.get("Sigma0", 100.0), dtype=float)
        if S.ndim == 0:
            S = float(S) * np.eye(R)
        elif S.ndim == 1:
            S = np.diag(np.broadcast_to(S, (R,)))
        return cls(mu0, S, d.get("nu", 2.0), d.get("A", 1000.0))


@dataclass(frozen=True)
class MixingSpec:
    """Heterogeneity distribution of the mixing block.

    ``dp_alpha_shape``/``dp_alpha_rate`` parameterize the Gamma prior of the
    DP concentration under the rate convention; the default (2, 2) is the
    prior whose conjugate update is ``Gamma(2 + K - 1, 2 - sum ln(1 - eta))``.
    ``fixed_alpha`` pins the concentration (no update).
    """

    kind: str = MVN
    K: int | None = None
    dirichlet_alpha: float = 1.0
    dp_alpha_shape: float = 2.0
    dp_alpha_rate: float = 2.0
    fixed_alpha: float | None = None

    def __post_init__(self):
        kind = str(self.kind).lower().replace("-", "").replace("_", "")
        kind = {"2fmon": FMON, "dp": DPMON}.get(kind, kind)
        if kind not in MIXING_KINDS:
            raise ConfigError(f"unknown mixing kind {self.kind!r}; expected one of {MIXING_KINDS}")
        object.__setattr__(self, "kind", kind)
        K = DEFAULT_K[kind] if self.K is None else int(self.K)
        if kind == MVN and K != 1:
            raise ConfigError("MVN mixing has exactly one component")
        if kind != MVN and K < 2:
            raise ConfigError(f"{kind} mixing needs K >= 2, got {K}")
        object.__setattr__(self, "K", K)
        if not self.dirichlet_alpha > 0 or not self.dp_alpha_shape > 0 or not self.dp_alpha_rate > 0:
            raise ConfigError("mixture concentration hyper-parameters must be positive")
        if self.fixed_alpha is not None and not self.fixed_alpha > 0:
            raise ConfigError("fixed_alpha must be positive")

    @property
    def label(self) -> str:
        return {MVN: "MVN", FMON: f"{self.K}-F-MON", DPMON: "DP-MON"}[self.kind]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MixingSpec":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown mixing keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class MCMCConfig:
    n_chains: int = 2
    n_iterations: int = 100_000
    n_burnin: int = 50_000
    thinning: int = 10
    rho0: float = 0.1
    rho_increment: float = 0.001
    rho_min: float = 1e-4
    target_acceptance: float = 0.3
    seed: int = 0
    freeze_after_burnin: bool = False
    disable_likelihood: bool = False
    backend: str = "numpy"

    def __post_init__(self):
        if self.backend not in BACKENDS:
            raise ConfigError(f"unknown backend {self.backend!r}; expected one of {BACKENDS}")
        if self.n_chains < 1:
            raise ConfigError("n_chains must be positive")
        if not 0 <= self.n_burnin < self.n_iterations:
            raise ConfigError("need 0 <= n_burnin < n_iterations")
        if self.thinning < 1:
            raise ConfigError("thinning must be at least 1")
        if not self.rho0 > 0:
            raise ConfigError("rho0 must be positive")

    @property
    def n_retained(self) -> int:
        return (self.n_iterations - self.n_burnin) // self.thinning

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MCMCConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown mcmc keys: {sorted(unknown)}")
        return cls(**d)


@dataclass(frozen=True)
class ModelPriors:
    """Hyper-priors for the mixing block and (WTP space) the diagonal normal block."""

    mixing: HyperPriors
    normal: HyperPriors | None = None


def default_priors(mixing: MixingSpec, n_mixing: int, n_normal: int = 0) -> ModelPriors:
    """Weakly informative defaults.

    The DP base measure is kept on the unit scale for both parts: N(0, I) for
    component means and half-t scale A=1 for component covariances.  Empty
    components are drawn from the base measure and carry stick mass into the
    predictive, so a diffuse covariance prior there yields wildly dispersed
    tastes.
    """
    if mixing.kind == DPMON:
        mix = HyperPriors.default(n_mixing, variance=1.0, A=1.0)
    else:
        mix = HyperPriors.default(n_mixing)
    normal = HyperPriors.default(n_normal) if n_normal else None
    return ModelPriors(mix, normal)


@dataclass
class SamplerState:
    """All latent quantities of one chain.

    Mixing block: component means ``zeta`` (K, R), covariances ``omega``
    (K, R, R), half-t auxiliaries ``a`` (K, R), weights ``pi``, sticks
    ``eta`` and concentration ``alpha`` (DP), assignments ``q`` (zero-based).
    Normal block (WTP space): means ``nzeta``, variances ``nomega`` and
    auxiliaries ``na``, all (Rn,).  ``theta`` holds person parameters (N, D).
    """

    zeta: np.ndarray
    omega: np.ndarray
    a: np.ndarray
    pi: np.ndarray
    q: np.ndarray
    theta: np.ndarray
    eta: np.ndarray | None = None
    alpha: float = 1.0
    nzeta: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nomega: np.ndarray = field(default_factory=lambda: np.zeros(0))
    na: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rho: float = 0.1
    iteration: int = 0
    loglik: np.ndarray | None = None  # per person, at theta
    acceptance: float = 0.0

    @property
    def K(self) -> int:
        return self.zeta.shape[0]

    def copy(self) -> "SamplerState":
        out = SamplerState(**{f.name: getattr(self, f.name) for f in fields(self)})
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, np.ndarray):
                setattr(out, f.name, v.copy())
        return out
