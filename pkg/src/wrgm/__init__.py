"""Bayesian Wasserstein repulsive Gaussian mixtures.

Gaussian optimal-transport geometry, repulsive priors over mixture
components, a blocked-collapsed Gibbs sampler and posterior summaries,
with the mean-repulsive (RGM) and non-repulsive (MFM) baselines.
"""

from .errors import ArgumentError, ConfigError, DataError, NumericError, WrgmError
from .gaussian import (
    GaussianComponent,
    bures_squared,
    hellinger_squared,
    log_pdf,
    spd,
    spd_sqrt,
    w2_squared,
)
from .priors import PriorHyperparams
from .rng import RngStream

__version__ = "0.1.0"

__all__ = [
    "ArgumentError",
    "ConfigError",
    "DataError",
    "GaussianComponent",
    "NumericError",
    "PriorHyperparams",
    "RngStream",
    "WrgmError",
    "bures_squared",
    "hellinger_squared",
    "log_pdf",
    "spd",
    "spd_sqrt",
    "w2_squared",
]
