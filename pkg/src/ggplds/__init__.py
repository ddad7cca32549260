"""Graph-gamma-process (generalized) linear dynamical systems.

Gibbs-sampling inference for real-valued (Gaussian) and count-valued
(negative binomial) multivariate time series, with overlapping-community
decomposition of the latent transition structure, multi-horizon
forecasting, and synthetic benchmark generation.
"""

from .samplers import RngStream
from .state import (
    Hyperparameters,
    GgpState,
    TransitionState,
    ObservationState,
    LatentTrajectory,
    ModelState,
    PosteriorSample,
    TimeSeriesData,
    init_random,
    validate_sample,
)

__all__ = [
    "RngStream",
    "Hyperparameters",
    "GgpState",
    "TransitionState",
    "ObservationState",
    "LatentTrajectory",
    "ModelState",
    "PosteriorSample",
    "TimeSeriesData",
    "init_random",
    "validate_sample",
]
