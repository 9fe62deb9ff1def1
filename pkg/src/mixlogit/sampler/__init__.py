"""Metropolis-within-Gibbs estimation of mixed logit models."""

from .chain import Model, data_hash, run_chain, run_estimation
from .draws import DrawLayout, PosteriorDraws
from .model import (DPMON, FMON, MVN, HyperPriors, MCMCConfig, MixingSpec, ModelPriors, SamplerState,
                    default_priors)

__all__ = [
    "DPMON", "FMON", "MVN", "DrawLayout", "HyperPriors", "MCMCConfig", "MixingSpec", "Model", "ModelPriors",
    "PosteriorDraws", "SamplerState", "data_hash", "default_priors", "run_chain", "run_estimation",
]
