"""Reflective flow sampling for toy flow-matching models."""

__version__ = "0.1.0"

from ._backend import NAME as BACKEND
from .embedding import GuidanceParams, alignment_coefficient, mix, semantic_direction, weighted
from .fields import GaussianMixtureField, LinearEmbeddingField
from .numerics import Rng
from .sampler import SamplerConfig, rf_sample, standard_sample

__all__ = [
    "BACKEND",
    "GaussianMixtureField",
    "GuidanceParams",
    "LinearEmbeddingField",
    "Rng",
    "SamplerConfig",
    "alignment_coefficient",
    "mix",
    "rf_sample",
    "semantic_direction",
    "standard_sample",
    "weighted",
]
