"""Spectral analysis and boundary null control of heat conduction in rod
chains joined by point masses."""
from .kernels import BACKEND
from .model import (
    CoefficientDescriptor,
    ConfigError,
    ProblemConfig,
    Rod,
    StateVector,
    h_norm,
    inner_product,
    load_config,
    make_config,
    validate,
)
from .shooting import SolverError, shoot_left, shoot_right
from .spectrum import eigenfunction, eigenpairs, eigenvalues, solve_spectrum

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CoefficientDescriptor",
    "ConfigError",
    "ProblemConfig",
    "Rod",
    "SolverError",
    "StateVector",
    "eigenfunction",
    "eigenpairs",
    "eigenvalues",
    "h_norm",
    "inner_product",
    "load_config",
    "make_config",
    "shoot_left",
    "shoot_right",
    "solve_spectrum",
    "validate",
]
