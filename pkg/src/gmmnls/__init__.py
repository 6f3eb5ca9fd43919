"""Nonlinear least squares with Gaussian-mixture factors."""

from . import _backend
from .lie import ManifoldElement, exp_map, log_map, ominus, oplus
from .mixtures import (
    METHODS,
    FactorLinearization,
    GaussianComponent,
    GaussianMixture,
    MixtureFactor,
    SharedModelMixture,
    linearize,
)
from .solver import Problem, SolverConfig, OptimizationResult, laplace_covariance, lm_solve, solve

__version__ = "0.1.0"


def backend() -> str:
    """Name of the active kernel backend, ``"cython"`` or ``"python"``."""
    return _backend.name


__all__ = [
    "METHODS",
    "FactorLinearization",
    "GaussianComponent",
    "GaussianMixture",
    "ManifoldElement",
    "MixtureFactor",
    "OptimizationResult",
    "Problem",
    "SharedModelMixture",
    "SolverConfig",
    "backend",
    "exp_map",
    "laplace_covariance",
    "linearize",
    "lm_solve",
    "log_map",
    "ominus",
    "oplus",
    "solve",
]
