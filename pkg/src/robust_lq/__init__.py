"""Entropy-regularized robust linear-quadratic control: solvers, simulation and checks."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    __version__ = "0.0.0"

from .model import (CoefficientError, DomainError, Problem, ThetaCoefficients, TwoPoint, UniformPoly,
                    coefficients_at, validate, validate_two_point, validate_uniform)
from .policy import GaussianPolicy, GridGibbsPolicy, entropy, gaussian_from_value, gibbs_on_grid, sample
from .riccati import (ThetaValueFunction, TwoPointSolution, hjb_residual, solve_theta,
                      solve_two_point_closed, solve_two_point_numeric)
from .sde_sim import MCEstimate, SimConfig, estimate_cost_exploratory, step_classical, step_exploratory

__all__ = [
    "CoefficientError", "DomainError", "GaussianPolicy", "GridGibbsPolicy", "MCEstimate", "Problem",
    "SimConfig", "ThetaCoefficients", "ThetaValueFunction", "TwoPoint", "TwoPointSolution", "UniformPoly",
    "coefficients_at", "entropy", "estimate_cost_exploratory", "gaussian_from_value", "gibbs_on_grid",
    "hjb_residual", "sample", "solve_theta", "solve_two_point_closed", "solve_two_point_numeric",
    "step_classical", "step_exploratory", "validate", "validate_two_point", "validate_uniform",
]
