"""Identification of latent linear SDEs observed at irregular times.

Continuous-discrete Kalman filtering, two-filter smoothing, and a
continuous-time EM procedure for the dynamics matrix and differential
diffusion covariance, with a discrete-time EM baseline and an experiment
harness for step-size irregularity studies.
"""

from .kernels import BACKEND
from .model import DiscretizedStep, ModelParams, TimedObservations, discretize, validate
from .errors import NumericalError

__all__ = [
    "BACKEND",
    "DiscretizedStep",
    "ModelParams",
    "NumericalError",
    "TimedObservations",
    "discretize",
    "validate",
]
