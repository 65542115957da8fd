"""Interpolation of functionals of a stationary vector process from noisy
observations outside a finite union of intervals, with minimax-robust
estimates for classes of spectral densities."""
from .densities import Lorentzian, SpectralDensity, White, validate_density
from .errors import (FormMismatch, GridMismatch, IllConditioned, InfeasibleClass, InterpError,
                     MinimalityLost, ModelError, NumericalError, SingularDensity, Stalled,
                     UnsupportedClass)
from .estimator import EstimateSolution, cross_mse, estimate, verify_orthogonality
from .grids import FrequencyGrid, MissingSet, WeightFunction
from .operators import OperatorSystem, assemble_system, solve_c
from .simulation import SimulationConfig, empirical_mse, gaussian_oracle

__version__ = "0.1.0"

__all__ = [
    "EstimateSolution", "FormMismatch", "FrequencyGrid", "GridMismatch", "IllConditioned",
    "InfeasibleClass", "InterpError", "Lorentzian", "MinimalityLost", "MissingSet", "ModelError",
    "NumericalError", "OperatorSystem", "SimulationConfig", "SingularDensity", "SpectralDensity",
    "Stalled", "UnsupportedClass", "WeightFunction", "White", "assemble_system", "cross_mse",
    "empirical_mse", "estimate", "gaussian_oracle", "solve_c", "validate_density",
    "verify_orthogonality",
]
