"""Synthetic panels with skew-normal-logistic tastes and their true predictive
choice distributions.

Scenario ``skewed``: both tastes SNL(0, 1, 50).  Scenario ``multimodal``:
25% SNL(1,1,40) x SNL(-2,1,80), 25% SNL(-2,1,70) x SNL(-2,1,70), 50%
SNL(1,1,-50) x SNL(1,1,-50).  Attributes are i.i.d. Uniform(lo, hi) and
choices maximize utility with standard Gumbel noise.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .data import ChoiceDataset, PersonRecord, atomic_write, format_float, make_task
from .errors import ConfigError
from .stats import RandomStream, sample_gumbel, sample_snl
from .utility import log_softmax

SKEWED = "skewed"
MULTIMODAL = "multimodal"
SCENARIO_ALIASES = {"1": SKEWED, "skewed": SKEWED, "2": MULTIMODAL, "multimodal": MULTIMODAL,
                    "multimodalskewed": MULTIMODAL, "multi-modal": MULTIMODAL}

# (share, ((mu, sigma, lambda) per taste coordinate))
SEGMENTS = {
    SKEWED: [(1.0, ((0.0, 1.0, 50.0), (0.0, 1.0, 50.0)))],
    MULTIMODAL: [
        (0.25, ((1.0, 1.0, 40.0), (-2.0, 1.0, 80.0))),
        (0.25, ((-2.0, 1.0, 70.0), (-2.0, 1.0, 70.0))),
        (0.50, ((1.0, 1.0, -50.0), (1.0, 1.0, -50.0))),
    ],
}


def scenario_name(name) -> str:
    key = str(name).strip().lower().replace("_", "")
    if key not in SCENARIO_ALIASES:
        raise ConfigError(f"unknown scenario {name!r}; expected 'skewed' (1) or 'multimodal' (2)")
    return SCENARIO_ALIASES[key]


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str = SKEWED
    N: int = 1000
    T: int = 8
    J: int = 5
    attribute_range: tuple[float, float] = (-5.0, 5.0)
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "scenario", scenario_name(self.scenario))
        if min(self.N, self.T, self.J) < 1:
            raise ConfigError("N, T and J must be at least 1")
        lo, hi = self.attribute_range
        if not lo < hi:
            raise ConfigError(f"attribute_range needs lo < hi, got {self.attribute_range}")


@dataclass(frozen=True)
class TrueTasteTable:
    beta: np.ndarray  # (N, 2)
    segment: np.ndarray  # (N,) int

    def __len__(self) -> int:
        return self.beta.shape[0]


def segment_counts(scenario: str, N: int) -> list[int]:
    """Exact segment sizes: floor of each share, remainder to the last segment."""
    shares = [s for s, _ in SEGMENTS[scenario_name(scenario)]]
    counts = [math.floor(s * N) for s in shares[:-1]]
    return counts + [N - sum(counts)]


def _snl_columns(params, n: int, rng: RandomStream) -> np.ndarray:
    return np.column_stack([sample_snl(mu, s, lam, rng, size=n) for mu, s, lam in params])


def generate_tastes(spec: ScenarioSpec, rng: RandomStream | None = None) -> TrueTasteTable:
    """Person tastes with exact segment proportions; segments are assigned as
    contiguous blocks of a seeded permutation of person indices."""
    rng = rng or RandomStream(spec.seed).child(0)
    segments = SEGMENTS[spec.scenario]
    counts = segment_counts(spec.scenario, spec.N)
    order = rng.generator.permutation(spec.N)
    beta = np.empty((spec.N, 2))
    label = np.empty(spec.N, dtype=np.int64)
    start = 0
    for s, ((_, params), count) in enumerate(zip(segments, counts)):
        idx = order[start:start + count]
        beta[idx] = _snl_columns(params, count, rng) if count else 0.0
        label[idx] = s
        start += count
    return TrueTasteTable(beta, label)


class ScenarioTasteLaw:
    """Population taste distribution of a scenario (segment drawn by share)."""

    def __init__(self, scenario: str):
        self.scenario = scenario_name(scenario)

    def sample(self, n: int, rng: RandomStream) -> np.ndarray:
        segments = SEGMENTS[self.scenario]
        shares = np.array([s for s, _ in segments])
        which = rng.generator.choice(len(segments), size=n, p=shares)
        out = np.empty((n, 2))
        for s, (_, params) in enumerate(segments):
            idx = np.flatnonzero(which == s)
            if idx.size:
                out[idx] = _snl_columns(params, idx.size, rng)
        return out


def _choose(utility: np.ndarray, rng: RandomStream, noise: bool) -> np.ndarray:
    if noise:
        utility = utility + sample_gumbel(rng, size=utility.shape)
    return np.argmax(utility, axis=-1)


def generate_dataset(spec: ScenarioSpec, tastes: TrueTasteTable, rng: RandomStream | None = None,
                     noise: bool = True, id_prefix: str = "") -> ChoiceDataset:
    """Linear-in-attributes panel ``U = x1 b1 + x2 b2 + eps`` for the given tastes.

    ``noise=False`` drops the Gumbel term (diagnostic: choices become the
    deterministic argmax).
    """
    if len(tastes) != spec.N:
        raise ConfigError(f"taste table has {len(tastes)} rows, scenario expects N={spec.N}")
    rng = rng or RandomStream(spec.seed).child(1)
    lo, hi = spec.attribute_range
    X = lo + (hi - lo) * rng.generator.random((spec.N, spec.T, spec.J, 2))
    v = np.einsum("ntjp,np->ntj", X, tastes.beta)
    chosen = _choose(v, rng, noise)
    alt_ids = [str(j + 1) for j in range(spec.J)]
    persons = []
    for n in range(spec.N):
        tasks = tuple(make_task(t + 1, alt_ids, X[n, t], chosen[n, t]) for t in range(spec.T))
        persons.append(PersonRecord(f"{id_prefix}{n + 1}", tasks))
    return ChoiceDataset(tuple(persons), ("x1", "x2")).check()


@dataclass(frozen=True)
class Replication:
    train: ChoiceDataset
    validation: ChoiceDataset
    train_tastes: TrueTasteTable
    validation_tastes: TrueTasteTable


def simulate_replication(spec: ScenarioSpec, n_validation: int = 25, validation_tasks: int = 1) -> Replication:
    """Training panel plus a validation panel drawn afresh from the same process."""
    root = RandomStream(spec.seed)
    tastes = generate_tastes(spec, root.child(0))
    train = generate_dataset(spec, tastes, root.child(1))
    vspec = ScenarioSpec(spec.scenario, n_validation, validation_tasks, spec.J, spec.attribute_range, spec.seed)
    vtastes = generate_tastes(vspec, root.child(2))
    validation = generate_dataset(vspec, vtastes, root.child(3), id_prefix="v")
    return Replication(train, validation, tastes, vtastes)


def true_predictive_distribution(attributes, taste_sampler: Callable[[int, RandomStream], np.ndarray],
                                 n_draws: int = 10_000, rng: RandomStream | None = None) -> np.ndarray:
    """Monte-Carlo average of MNL probabilities over draws from the true taste law.

    ``attributes`` is ``(J, P)`` (or ``(n_tasks, J, P)``); ``taste_sampler(n, rng)``
    returns ``(n, P)`` taste vectors.  The same taste draws are shared across
    tasks when several are given.
    """
    if n_draws < 1:
        raise ConfigError("n_draws must be at least 1")
    rng = rng or RandomStream(0)
    X = np.asarray(attributes, dtype=float)
    single = X.ndim == 2
    if single:
        X = X[None]
    beta = np.asarray(taste_sampler(n_draws, rng), dtype=float)
    out = np.empty(X.shape[:2])
    for t in range(X.shape[0]):
        v = beta @ X[t].T  # (n_draws, J)
        p = np.exp(log_softmax(v)).mean(axis=0)
        out[t] = p / p.sum()
    return out[0] if single else out


def point_mass(beta) -> Callable[[int, RandomStream], np.ndarray]:
    beta = np.asarray(beta, dtype=float)
    return lambda n, rng: np.broadcast_to(beta, (n, beta.size))


def write_tastes_csv(table: TrueTasteTable, person_ids, path) -> None:
    def write(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["person_id", "beta1", "beta2", "segment"])
        for pid, b, s in zip(person_ids, table.beta, table.segment):
            w.writerow([pid, format_float(b[0]), format_float(b[1]), int(s)])
    atomic_write(path, write)


def read_tastes_csv(path) -> tuple[list[str], TrueTasteTable]:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    ids = [r["person_id"] for r in rows]
    beta = np.array([[float(r["beta1"]), float(r["beta2"])] for r in rows]).reshape(-1, 2)
    seg = np.array([int(r["segment"]) for r in rows], dtype=np.int64)
    return ids, TrueTasteTable(beta, seg)


# ---------------------------------------------------------------------------
# WTP-space panels with known normal taste laws (parameter-recovery checks)


@dataclass(frozen=True)
class WtpLaw:
    """Normal taste law in WTP space: independent normal ``asc`` and
    ``log_price_sensitivity``, multivariate normal WTPs."""

    asc_mean: float = 0.5
    asc_sd: float = 0.5
    log_scale_mean: float = -1.0
    log_scale_sd: float = 0.3
    wtp_mean: tuple[float, ...] = (-12.0, -8.0, 1.0)
    wtp_cov: tuple[tuple[float, ...], ...] = ((16.0, 4.0, 0.0), (4.0, 9.0, 0.0), (0.0, 0.0, 1.0))
    wtp_names: tuple[str, ...] = ("ivtt", "ovtt", "electric")

    def mean_vector(self) -> np.ndarray:
        return np.array([self.asc_mean, self.log_scale_mean, *self.wtp_mean])

    def sample(self, n: int, rng: RandomStream) -> np.ndarray:
        g = np.asarray(self.wtp_mean) + rng.normal((n, len(self.wtp_mean))) @ np.linalg.cholesky(
            np.asarray(self.wtp_cov)).T
        a = self.asc_mean + self.asc_sd * rng.normal(n)
        b = self.log_scale_mean + self.log_scale_sd * rng.normal(n)
        return np.column_stack([a, b, g])


def generate_wtp_dataset(N: int, T: int, law: WtpLaw = WtpLaw(), seed: int = 0):
    """Three-alternative WTP-space panel (two service options with ``d = 1`` and a
    status-quo option) with columns ``d, price, <wtp_names>``.

    Times are in hours, prices in dollars, the last WTP attribute is a 0/1
    dummy.  Returns ``(dataset, true_person_params)``.
    """
    from .utility import UtilitySpec, utilities

    rng = RandomStream(seed)
    theta = law.sample(N, rng.child(0))
    g = rng.child(1).generator
    J = 3
    d = np.broadcast_to(np.array([1.0, 1.0, 0.0]), (N, T, J))
    price = g.uniform(2.0, 30.0, (N, T, J))
    ivtt = g.uniform(0.1, 1.5, (N, T, J))
    ovtt = g.uniform(0.0, 0.5, (N, T, J))
    ovtt[..., 2] = 0.0
    electric = g.integers(0, 2, (N, T, J)).astype(float)
    X = np.stack([d, price, ivtt, ovtt, electric], axis=-1)[..., : 2 + len(law.wtp_mean)]
    spec = UtilitySpec.wtp(0, 1, range(2, 2 + len(law.wtp_mean)))
    v = utilities(spec, theta[:, None, :], X)
    chosen = _choose(v, rng.child(2), True)
    names = ("d", "price", *law.wtp_names)
    alt_ids = ["service", "pooled", "current"]
    persons = [PersonRecord(str(n + 1), tuple(make_task(t + 1, alt_ids, X[n, t], chosen[n, t])
                                              for t in range(T)))
               for n in range(N)]
    return ChoiceDataset(tuple(persons), names[: X.shape[-1]], tuple(alt_ids)).check(), theta
