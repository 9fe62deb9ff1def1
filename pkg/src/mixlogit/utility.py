"""Utility specifications, MNL kernel probabilities and panel log-likelihoods."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ChoiceTask, PanelArrays, PersonRecord
from .errors import ConfigError, ShapeError

PROB_FLOOR = 1e-300
LOG_PROB_FLOOR = math.log(PROB_FLOOR)

LINEAR = "linear"
WTP = "wtp"


@dataclass(frozen=True)
class ParamPartition:
    """Block layout of the person-level parameter vector.

    ``normal`` indexes parameters with independent normal heterogeneity
    (diagonal covariance); ``mixing`` indexes the block governed by the
    mixing distribution (MVN, finite or DP mixture of normals).
    """

    normal: tuple[int, ...]
    mixing: tuple[int, ...]

    @property
    def size(self) -> int:
        return len(self.normal) + len(self.mixing)

    def __post_init__(self):
        idx = sorted(self.normal + self.mixing)
        if idx != list(range(len(idx))):
            raise ConfigError(f"partition blocks must be disjoint and cover 0..{len(idx) - 1}")


@dataclass(frozen=True)
class UtilitySpec:
    """Representative utility.

    ``linear``: ``V = x[columns] . theta``.
    ``wtp``: ``V = alpha d + exp(beta) (-p + x[wtp_columns] . gamma)`` with
    parameter vector ``(alpha, beta, gamma...)``; ``alpha`` and ``beta`` are
    independent normals, ``gamma`` follows the mixing distribution.
    """

    variant: str = LINEAR
    columns: tuple[int, ...] = ()
    asc: int | None = None
    price: int | None = None
    wtp_columns: tuple[int, ...] = ()

    def __post_init__(self):
        if self.variant == LINEAR:
            if not self.columns:
                raise ConfigError("linear utility needs at least one attribute column")
        elif self.variant == WTP:
            if self.asc is None or self.price is None:
                raise ConfigError("wtp utility needs asc and price columns")
            if self.price in self.wtp_columns:
                raise ConfigError("price column must be distinct from the wtp columns")
        else:
            raise ConfigError(f"unknown utility variant {self.variant!r}")

    @classmethod
    def linear(cls, columns: Sequence[int]) -> "UtilitySpec":
        return cls(LINEAR, columns=tuple(int(c) for c in columns))

    @classmethod
    def wtp(cls, asc: int, price: int, columns: Sequence[int]) -> "UtilitySpec":
        return cls(WTP, asc=int(asc), price=int(price), wtp_columns=tuple(int(c) for c in columns))

    @property
    def n_params(self) -> int:
        return len(self.columns) if self.variant == LINEAR else 2 + len(self.wtp_columns)

    @property
    def partition(self) -> ParamPartition:
        if self.variant == LINEAR:
            return ParamPartition((), tuple(range(self.n_params)))
        return ParamPartition((0, 1), tuple(range(2, self.n_params)))

    def referenced_columns(self) -> list[int]:
        if self.variant == LINEAR:
            return list(self.columns)
        return [self.asc, self.price, *self.wtp_columns]

    def param_names(self, attribute_names: Sequence[str]) -> list[str]:
        if self.variant == LINEAR:
            return [attribute_names[c] for c in self.columns]
        return ["asc", "log_price_sensitivity", *(f"wtp_{attribute_names[c]}" for c in self.wtp_columns)]

    def check_columns(self, n_attributes: int) -> None:
        bad = [c for c in self.referenced_columns() if not 0 <= c < n_attributes]
        if bad:
            raise ConfigError(f"utility references attribute columns {bad}, dataset has {n_attributes}")

    def to_dict(self) -> dict:
        if self.variant == LINEAR:
            return {"variant": LINEAR, "columns": list(self.columns)}
        return {"variant": WTP, "asc": self.asc, "price": self.price, "wtp_columns": list(self.wtp_columns)}

    @classmethod
    def from_dict(cls, d: dict) -> "UtilitySpec":
        d = dict(d)
        variant = d.pop("variant", LINEAR)
        if variant == LINEAR:
            return cls.linear(d.pop("columns"))
        return cls.wtp(d.pop("asc"), d.pop("price"), d.pop("wtp_columns"))


def utilities(spec: UtilitySpec, theta: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Representative utilities ``(..., J)`` for parameters ``(..., D)`` and
    attributes ``(..., J, P)`` (leading axes broadcast)."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != spec.n_params:
        raise ShapeError(f"expected {spec.n_params} parameters, got {theta.shape[-1]}")
    if X.shape[-1] <= max(spec.referenced_columns()):
        raise ShapeError(f"attribute rows have {X.shape[-1]} columns, utility needs "
                         f"{max(spec.referenced_columns()) + 1}")
    if spec.variant == LINEAR:
        return np.einsum("...jp,...p->...j", X[..., list(spec.columns)], theta)
    alpha = theta[..., 0, None]
    scale = np.exp(theta[..., 1, None])
    cols = list(spec.wtp_columns)
    wtp = np.einsum("...jp,...p->...j", X[..., cols], theta[..., 2:]) if cols else 0.0
    return alpha * X[..., spec.asc] + scale * (wtp - X[..., spec.price])


def representative_utility(spec: UtilitySpec, params, row) -> float:
    row = np.asarray(row, dtype=float)
    if row.ndim != 1:
        raise ShapeError("attribute row must be one-dimensional")
    return float(utilities(spec, params, row[None, :])[0])


def log_softmax(v: np.ndarray, available: np.ndarray | None = None) -> np.ndarray:
    """Log choice probabilities over the last axis with max-subtraction;
    unavailable alternatives get ``-inf``."""
    if available is not None:
        v = np.where(available, v, -np.inf)
    m = np.max(v, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    shifted = v - m
    return shifted - np.log(np.sum(np.exp(shifted), axis=-1, keepdims=True))


def mnl_probabilities(spec: UtilitySpec, params, task: ChoiceTask) -> np.ndarray:
    if task.available.sum() < 1:
        raise ShapeError(f"task {task.task_id} has no available alternative")
    v = utilities(spec, params, task.attributes)
    p = np.exp(log_softmax(v, task.available))
    return p / p.sum()


def person_log_likelihood(spec: UtilitySpec, params, person: PersonRecord) -> float:
    total = 0.0
    for task in person.tasks:
        v = utilities(spec, params, task.attributes)
        lp = log_softmax(v, task.available)[task.chosen]
        total += max(lp, LOG_PROB_FLOOR)
    return float(total)


class PanelLikelihood:
    """Vectorized chosen-alternative log-probabilities for a whole panel."""

    def __init__(self, spec: UtilitySpec, arrays: PanelArrays):
        spec.check_columns(arrays.X.shape[-1])
        self.spec = spec
        self.arrays = arrays
        self.n_persons = arrays.n_persons
        self._X = np.ascontiguousarray(arrays.X)
        self._avail = arrays.available
        self._all_available = bool(arrays.available.all())
        self._chosen = arrays.chosen[:, None]
        self._person = arrays.person
        # column slices cached once; the sampler evaluates this every sweep
        if spec.variant == LINEAR:
            self._Xlin = np.ascontiguousarray(self._X[..., list(spec.columns)])
        else:
            self._Xasc = np.ascontiguousarray(self._X[..., spec.asc])
            self._Xprice = np.ascontiguousarray(self._X[..., spec.price])
            self._Xwtp = np.ascontiguousarray(self._X[..., list(spec.wtp_columns)])

    def _utilities(self, theta_t: np.ndarray) -> np.ndarray:
        if theta_t.shape[-1] != self.spec.n_params:
            raise ShapeError(f"expected {self.spec.n_params} parameters, got {theta_t.shape[-1]}")
        if self.spec.variant == LINEAR:
            return np.einsum("...jp,...p->...j", self._Xlin, theta_t)
        wtp = np.einsum("...jp,...p->...j", self._Xwtp, theta_t[..., 2:])
        return theta_t[..., 0, None] * self._Xasc + np.exp(theta_t[..., 1, None]) * (wtp - self._Xprice)

    def task_log_prob(self, theta: np.ndarray) -> np.ndarray:
        """Chosen log-probabilities, shape ``(..., n_tasks)``, for person
        parameters ``(..., N, D)``; floored at ``ln(1e-300)``."""
        theta_t = np.take(theta, self._person, axis=-2)
        v = self._utilities(theta_t)
        avail = None if self._all_available else self._avail
        lp = log_softmax(v, avail)
        chosen = np.broadcast_to(self._chosen, lp.shape[:-1] + (1,))
        out = np.take_along_axis(lp, chosen, axis=-1)[..., 0]
        with np.errstate(invalid="ignore"):
            return np.where(np.isnan(out), np.nan, np.maximum(out, LOG_PROB_FLOOR))

    def person_log_lik(self, theta: np.ndarray) -> np.ndarray:
        """Per-person log-likelihood ``(N,)`` for parameters ``(N, D)``."""
        lp = self.task_log_prob(theta)
        return np.bincount(self._person, weights=lp, minlength=self.n_persons)
