"""Hierarchical Bayesian mixed logit with normal, finite-mixture and
Dirichlet-process-mixture heterogeneity."""

from .data import ChoiceDataset, ChoiceTask, PersonRecord, load_csv, split_train_validation, write_csv
from .errors import MixLogitError
from .sampler import HyperPriors, MCMCConfig, MixingSpec, PosteriorDraws, run_chain, run_estimation
from .stats import RandomStream
from .utility import UtilitySpec

__all__ = [
    "ChoiceDataset", "ChoiceTask", "HyperPriors", "MCMCConfig", "MixLogitError", "MixingSpec", "PersonRecord",
    "PosteriorDraws", "RandomStream", "UtilitySpec", "load_csv", "run_chain", "run_estimation",
    "split_train_validation", "write_csv",
]
__version__ = "0.1.0"
