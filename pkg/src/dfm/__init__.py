"""Diffusion flow matching on Gaussian-mixture targets."""

__version__ = "0.1.0"

from .errors import ConfigError, DomainError, NumericalError
from .grid import TimeGrid, Trajectory
from .model import Coupling, GaussianMixture
from .reports import MetricReport
from .rng import RngStream

__all__ = [
    "ConfigError",
    "Coupling",
    "DomainError",
    "GaussianMixture",
    "MetricReport",
    "NumericalError",
    "RngStream",
    "TimeGrid",
    "Trajectory",
]
