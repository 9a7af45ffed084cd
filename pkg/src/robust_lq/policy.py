"""Relaxed-control distributions: the closed-form Gaussian and a grid Gibbs density."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from .model import DomainError, ThetaCoefficients
from .riccati import TWO_PI_E, ThetaValueFunction, _quad

VARIANCE_FLOOR = 1e-300
GRID_POINTS = 801
GRID_HALF_WIDTH = 8.0  # in standard deviations
NORMALIZATION_TOL = 1e-10


class GridCoverageError(DomainError):
    pass


@dataclass(frozen=True)
class GaussianPolicy:
    mean_slope: float
    mean_intercept: float
    variance: float

    def __post_init__(self):
        if not self.variance > 0.0:
            raise DomainError(f"variance must be positive, got {self.variance}")

    def mean(self, x):
        return self.mean_slope * np.asarray(x, dtype=float) + self.mean_intercept

    @property
    def std(self) -> float:
        return math.sqrt(self.variance)

    def density(self, u, x: float = 0.0):
        u = np.asarray(u, dtype=float)
        return np.exp(-0.5 * (u - self.mean(x)) ** 2 / self.variance) / math.sqrt(2 * math.pi * self.variance)

    def scaled(self, factor: float) -> GaussianPolicy:
        """Same mean, variance multiplied by ``factor`` (what scaling alpha does)."""
        return GaussianPolicy(self.mean_slope, self.mean_intercept, self.variance * factor)


@dataclass(frozen=True)
class GridGibbsPolicy:
    u_grid: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise DomainError("Gibbs weights must be nonnegative")
        mass = trapezoid(self.weights, self.u_grid)
        if abs(mass - 1.0) > NORMALIZATION_TOL:
            raise DomainError(f"Gibbs weights integrate to {mass}, expected 1")

    def mean(self) -> float:
        return float(trapezoid(self.u_grid * self.weights, self.u_grid))

    def variance(self) -> float:
        m = self.mean()
        return float(trapezoid((self.u_grid - m) ** 2 * self.weights, self.u_grid))


def gaussian_from_value(coeffs: ThetaCoefficients, v, alpha: float) -> GaussianPolicy:
    """Gaussian minimizer of the entropy-regularized Hamiltonian for quadratic ``v``."""
    k2, k1, _ = _quad(v)
    gain = coeffs.R + coeffs.D ** 2 * k2
    if gain <= 0.0:
        raise DomainError(f"R + D^2 k2 = {gain:.6g} <= 0; no Gaussian minimizer")
    slope = -(coeffs.S + coeffs.B * k2 + coeffs.C * coeffs.D * k2) / gain
    intercept = -(coeffs.N + coeffs.B * k1) / gain
    return GaussianPolicy(slope, intercept, alpha / gain)


def hamiltonian_in_u(coeffs: ThetaCoefficients, v, x: float, u):
    """``f(x,u) + v'(x) b(x,u) + v''(x) sigma^2(x,u) / 2`` for a point action ``u``."""
    k2, k1, _ = _quad(v)
    u = np.asarray(u, dtype=float)
    c = coeffs
    f = 0.5 * c.L * x * x + c.S * x * u + 0.5 * c.R * u * u + c.M * x + c.N * u
    b = c.A * x + c.B * u
    sig2 = (c.C * x + c.D * u) ** 2
    return f + (k2 * x + k1) * b + 0.5 * k2 * sig2


def default_u_grid(coeffs: ThetaCoefficients, v, alpha: float, x: float,
                   points: int = GRID_POINTS, half_width: float = GRID_HALF_WIDTH) -> np.ndarray:
    g = gaussian_from_value(coeffs, v, alpha)
    m = float(g.mean(x))
    return np.linspace(m - half_width * g.std, m + half_width * g.std, points)


def gibbs_on_grid(coeffs: ThetaCoefficients, v, alpha: float, x: float,
                  u_grid=None, convention: str = "minimize") -> GridGibbsPolicy:
    """Normalized Gibbs density of the Hamiltonian on a grid of actions.

    ``convention="minimize"`` uses ``exp(-H/alpha)``, the minimizer of
    ``H - alpha * entropy``.  ``"displayed"`` uses ``exp(+H)`` and is kept
    only so the two densities can be inspected side by side; on a
    quadratic Hamiltonian it is not normalizable off a bounded grid.
    """
    if u_grid is None:
        u_grid = default_u_grid(coeffs, v, alpha, x)
    u = np.asarray(u_grid, dtype=float)
    if u.ndim != 1 or u.size < 2 or np.any(np.diff(u) <= 0):
        raise DomainError("u_grid must be a strictly increasing 1-d grid")
    h = hamiltonian_in_u(coeffs, v, x, u)
    if convention == "minimize":
        expo = -h / alpha
    elif convention == "displayed":
        expo = h
    else:
        raise ValueError(f"unknown convention {convention!r}")
    # shift by the max exponent before exponentiating
    w = np.exp(expo - np.max(expo))
    mass = trapezoid(w, u)
    if not np.isfinite(mass) or mass <= 0.0:
        raise GridCoverageError("Gibbs weights vanish on the grid; widen or recenter it")
    return GridGibbsPolicy(u, w / mass)


def _xlogx(w):
    out = np.zeros_like(w)
    pos = w > 0
    out[pos] = w[pos] * np.log(w[pos])
    return out


def entropy(p) -> float:
    """Differential entropy of a Gaussian or grid policy."""
    if isinstance(p, GaussianPolicy):
        return 0.5 * math.log(TWO_PI_E * p.variance)
    if isinstance(p, GridGibbsPolicy):
        return float(-trapezoid(_xlogx(p.weights), p.u_grid))
    raise TypeError(f"unsupported policy type {type(p).__name__}")


def sample(p: GaussianPolicy, x, rng: np.random.Generator, size=None):
    """Draw actions at state ``x``; the variance is clamped at VARIANCE_FLOOR."""
    sd = math.sqrt(max(p.variance, VARIANCE_FLOOR))
    return p.mean(x) + sd * rng.standard_normal(size)


def total_variation(p: GridGibbsPolicy, q: GaussianPolicy, x: float = 0.0) -> float:
    """Total-variation distance between a grid density and a Gaussian, on the grid."""
    return 0.5 * float(trapezoid(np.abs(p.weights - q.density(p.u_grid, x)), p.u_grid))
