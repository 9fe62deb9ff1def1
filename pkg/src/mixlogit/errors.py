"""Exception hierarchy shared across the package."""


class MixLogitError(Exception):
    """Base class for all package errors."""


class DomainError(MixLogitError, ValueError):
    """A distribution parameter lies outside its support."""


class NonPositiveDefinite(MixLogitError, ValueError):
    """A covariance matrix could not be factorized."""


class ShapeError(MixLogitError, ValueError):
    """Array dimensions do not agree."""


class SchemaError(MixLogitError, ValueError):
    """A required CSV column is missing."""


class IntegrityError(MixLogitError, ValueError):
    """A dataset violates one of its structural invariants."""


class ConfigError(MixLogitError, ValueError):
    """Invalid run configuration."""


class SpecMismatch(MixLogitError, ValueError):
    """Model specification does not match persisted draws."""


class CoverageError(MixLogitError, KeyError):
    """A predictive distribution does not cover every requested task."""


class InsufficientDraws(MixLogitError, ValueError):
    """Too few posterior draws for the requested statistic."""


class SamplerError(MixLogitError, RuntimeError):
    """An MCMC update failed; carries the iteration index."""

    def __init__(self, message: str, iteration: int, chain: int | None = None):
        super().__init__(f"{message} (chain {chain}, iteration {iteration})")
        self.iteration = iteration
        self.chain = chain
