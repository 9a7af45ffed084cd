"""Coefficient families, problem instances and assumption validators.

A scenario ``theta`` fixes scalar dynamics ``b = A x + B u``,
``sigma = C x + D u`` and running cost
``f = L/2 x^2 + S x u + R/2 u^2 + M x + N u``.  Model uncertainty is a
family of scenarios plus a set of measures over it: either two scenarios
mixed by ``lambda`` or a polynomial-in-theta family with ``theta ~ U(0, a)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import minimize_scalar

FIELDS = ("A", "B", "C", "D", "L", "S", "R", "M", "N")
MAX_POLY_DEGREE = 4
UNIFORM_GRID_POINTS = 1001
EQUALITY_TOL = 1e-9


class DomainError(ValueError):
    """Argument outside the domain of an operation."""


class CoefficientError(ValueError):
    """Invalid coefficient value; ``field`` names the offending symbol."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ThetaCoefficients:
    """Dynamics and cost coefficients of one scenario."""

    A: float = 0.0
    B: float = 0.0
    C: float = 0.0
    D: float = 0.0
    L: float = 0.0
    S: float = 0.0
    R: float = 0.0
    M: float = 0.0
    N: float = 0.0

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not math.isfinite(value):
                raise CoefficientError(f.name, f"must be finite, got {value!r}")
            object.__setattr__(self, f.name, float(value))

    def require_positive_weights(self) -> ThetaCoefficients:
        # L, R > 0 is the standing assumption; raw solvers accept degenerate
        # weights so that limiting cases stay computable.
        if self.L <= 0:
            raise CoefficientError("L", f"state cost weight must be > 0, got {self.L}")
        if self.R <= 0:
            raise CoefficientError("R", f"control cost weight must be > 0, got {self.R}")
        return self

    def as_dict(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in FIELDS}

    def replace(self, **changes: float) -> ThetaCoefficients:
        return ThetaCoefficients(**{**self.as_dict(), **changes})


@dataclass(frozen=True)
class TwoPoint:
    """Two scenarios; the measure puts mass ``lambda`` on ``theta1``."""

    theta1: ThetaCoefficients
    theta2: ThetaCoefficients

    @classmethod
    def single(cls, theta: ThetaCoefficients) -> TwoPoint:
        return cls(theta, theta)

    def scenarios(self) -> dict[int, ThetaCoefficients]:
        return {1: self.theta1, 2: self.theta2}


@dataclass(frozen=True)
class UniformPoly:
    """Coefficients polynomial in theta (ascending powers), theta ~ U(0, a), a in [a1, a2]."""

    coeff_polys: Mapping[str, tuple[float, ...]]
    a1: float
    a2: float

    def __post_init__(self):
        polys = {}
        for name, coeffs in self.coeff_polys.items():
            if name not in FIELDS:
                raise CoefficientError(name, "unknown coefficient name")
            c = tuple(float(v) for v in np.atleast_1d(coeffs))
            if len(c) == 0 or len(c) - 1 > MAX_POLY_DEGREE:
                raise CoefficientError(name, f"polynomial degree must be 0..{MAX_POLY_DEGREE}")
            if not all(math.isfinite(v) for v in c):
                raise CoefficientError(name, "polynomial coefficients must be finite")
            polys[name] = c
        for name in FIELDS:
            polys.setdefault(name, (0.0,))
        object.__setattr__(self, "coeff_polys", polys)
        if not (0 < self.a1 < self.a2):
            raise CoefficientError("a1", f"need 0 < a1 < a2, got a1={self.a1}, a2={self.a2}")

    @classmethod
    def constant(cls, theta: ThetaCoefficients, a1: float, a2: float) -> UniformPoly:
        return cls({k: (v,) for k, v in theta.as_dict().items()}, a1, a2)

    def evaluate(self, name: str, theta):
        return P.polyval(theta, self.coeff_polys[name])

    def critical_points(self) -> np.ndarray:
        """Interior extrema of every coefficient polynomial and of 2A + C^2 on [0, a2]."""
        polys = list(self.coeff_polys.values())
        polys.append(P.polyadd(2 * np.asarray(self.coeff_polys["A"]),
                               P.polymul(self.coeff_polys["C"], self.coeff_polys["C"])))
        pts = []
        for c in polys:
            d = P.polyder(c)
            if len(d) < 2 or not np.any(d[1:]):
                continue
            for r in P.polyroots(d):
                if abs(r.imag) < 1e-12 and 0.0 <= r.real <= self.a2:
                    pts.append(float(r.real))
        return np.array(sorted(pts))


CoefficientFamily = TwoPoint | UniformPoly


@dataclass(frozen=True)
class Problem:
    family: CoefficientFamily
    rho: float
    alpha: float
    x0_bound: float = 1.0

    def __post_init__(self):
        for name in ("rho", "alpha", "x0_bound"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise CoefficientError(name, f"must be finite and > 0, got {value}")


def coefficients_at(family: CoefficientFamily, theta: float) -> ThetaCoefficients:
    """Coefficients of scenario ``theta`` (1 or 2 for two-point, [0, a2] for uniform)."""
    if isinstance(family, TwoPoint):
        if theta == 1:
            return family.theta1
        if theta == 2:
            return family.theta2
        raise DomainError(f"two-point scenario index must be 1 or 2, got {theta!r}")
    if not (0.0 <= theta <= family.a2):
        raise DomainError(f"theta={theta} outside [0, {family.a2}]")
    return ThetaCoefficients(**{k: float(family.evaluate(k, theta)) for k in FIELDS})


# -- validation ---------------------------------------------------------------


@dataclass(frozen=True)
class CheckItem:
    name: str
    passed: bool
    value: float
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    items: tuple[CheckItem, ...]
    rho_threshold: float = float("nan")
    margin: float = float("nan")
    worst_theta: float | None = None
    notes: tuple[str, ...] = field(default_factory=tuple)

    @property
    def passed(self) -> bool:
        return all(item.passed for item in self.items)

    def failed(self) -> list[CheckItem]:
        return [item for item in self.items if not item.passed]

    def item(self, name: str) -> CheckItem:
        for it in self.items:
            if it.name == name:
                return it
        raise KeyError(name)

    def summary(self) -> str:
        lines = [f"{'PASS' if it.passed else 'FAIL'} {it.name}: {it.value:.6g} {it.detail}".rstrip()
                 for it in self.items]
        return "\n".join(lines + list(self.notes))


def drift_excess(c: ThetaCoefficients) -> float:
    """max[(D^2 S^2 - 2 R S (B + C D)) / R, 0]; the control-coupling part of the rho bound."""
    return max((c.D ** 2 * c.S ** 2 - 2 * c.R * c.S * (c.B + c.C * c.D)) / c.R, 0.0)


def rho_bound(c: ThetaCoefficients) -> float:
    """Per-scenario discount lower bound 2A + C^2 + drift_excess."""
    return 2 * c.A + c.C ** 2 + drift_excess(c)


def _coupling_terms(t1: ThetaCoefficients, t2: ThetaCoefficients) -> dict[str, float]:
    B1, C1, D1, S1 = t1.B, t1.C, t1.D, t1.S
    B2, C2, D2, S2 = t2.B, t2.C, t2.D, t2.S
    den_v1 = (B1 * B2 + C2 * D2 * B1 + C1 * C2 * D1 * D2) * (S2 * B1 + C1 * D1 * S2)
    den_v2 = (B1 * B2 + C1 * D1 * B2 + C1 * C2 * D1 * D2) * (S1 * B2 + C2 * D2 * S1)
    num_v1 = S1 * S2 * (C1 * D1 * B2 - C2 * D2 * B1)
    num_v2 = S1 * S2 * (C2 * D2 * B1 - C1 * D1 * B2)
    return {"den_v1": den_v1, "den_v2": den_v2, "num_v1": num_v1, "num_v2": num_v2}


def coupling_values(t1: ThetaCoefficients, t2: ThetaCoefficients) -> tuple[float, float]:
    """(V1, V2) of the two-point assumption; nan where a denominator vanishes."""
    t = _coupling_terms(t1, t2)
    v1 = t["num_v1"] / t["den_v1"] if t["den_v1"] != 0 else float("nan")
    v2 = t["num_v2"] / t["den_v2"] if t["den_v2"] != 0 else float("nan")
    return v1, v2


def two_point_rho_threshold(t1: ThetaCoefficients, t2: ThetaCoefficients, lam: float) -> float:
    first = 2 * lam * t1.A + lam * t1.C ** 2 + drift_excess(t1)
    second = 2 * (1 - lam) * t2.A + (1 - lam) * t2.C ** 2 + drift_excess(t2)
    return max(first, second)


def validate_two_point(p: Problem, lam: float) -> ValidationReport:
    """Evaluate the two-point standing assumption item by item.

    Items: ``i`` rho bound, ``ii_1``/``ii_2`` R + D^2 V = 0 (to EQUALITY_TOL),
    ``iii_1``/``iii_2`` nonvanishing denominators, ``iv_1``/``iv_2``
    S^2 + D^2 L V < 0.  Undefined V makes the dependent items fail instead
    of raising.
    """
    if not isinstance(p.family, TwoPoint):
        raise DomainError("validate_two_point needs a TwoPoint family")
    if not 0.0 <= lam <= 1.0:
        raise DomainError(f"lambda must lie in [0, 1], got {lam}")
    t1, t2 = p.family.theta1, p.family.theta2
    items = []
    for idx, t in ((1, t1), (2, t2)):
        for name in ("L", "R"):
            val = getattr(t, name)
            items.append(CheckItem(f"{name}{idx}_positive", val > 0, val))

    threshold = two_point_rho_threshold(t1, t2, lam)
    items.append(CheckItem("i", p.rho > threshold, p.rho - threshold,
                           f"rho={p.rho:.6g} vs bound {threshold:.6g}"))

    terms = _coupling_terms(t1, t2)
    v1, v2 = coupling_values(t1, t2)
    items.append(CheckItem("iii_1", terms["den_v2"] != 0, terms["den_v2"],
                           "(B1B2+C1D1B2+C1C2D1D2)(S1B2+C2D2S1) != 0"))
    items.append(CheckItem("iii_2", terms["den_v1"] != 0, terms["den_v1"],
                           "(B1B2+C2D2B1+C1C2D1D2)(S2B1+C1D1S2) != 0"))
    for idx, t, v in ((1, t1, v1), (2, t2, v2)):
        if math.isnan(v):
            items.append(CheckItem(f"ii_{idx}", False, float("nan"), f"V{idx} undefined"))
            items.append(CheckItem(f"iv_{idx}", False, float("nan"), f"V{idx} undefined"))
            continue
        gap = abs(t.R + t.D ** 2 * v)
        items.append(CheckItem(f"ii_{idx}", gap < EQUALITY_TOL, gap,
                               f"|R{idx} + D{idx}^2 V{idx}| (exact equality required)"))
        q = t.S ** 2 + t.D ** 2 * t.L * v
        items.append(CheckItem(f"iv_{idx}", q < 0, q, f"S{idx}^2 + D{idx}^2 L{idx} V{idx} < 0"))
    return ValidationReport(tuple(items), rho_threshold=threshold, margin=p.rho - threshold)


def validate_scenarios(p: Problem) -> ValidationReport:
    """Per-scenario rho bound and R L > S^2 for a two-point family.

    This is the solvability condition of each endpoint problem (lambda in
    {0, 1}); the CLI gates on it because the coupled conditions of
    ``validate_two_point`` are only met on a measure-zero set.
    """
    if not isinstance(p.family, TwoPoint):
        raise DomainError("validate_scenarios needs a TwoPoint family")
    items = []
    margins = []
    for idx, t in p.family.scenarios().items():
        for name in ("L", "R"):
            val = getattr(t, name)
            items.append(CheckItem(f"{name}{idx}_positive", val > 0, val))
        if t.R > 0:
            bound = rho_bound(t)
            margins.append(p.rho - bound)
            items.append(CheckItem(f"rho_bound_{idx}", p.rho > bound, p.rho - bound,
                                   f"rho={p.rho:.6g} vs 2A+C^2+max[..]={bound:.6g}"))
        q = t.R * t.L - t.S ** 2
        items.append(CheckItem(f"RL_gt_S2_{idx}", q > 0, q))
    margin = min(margins) if margins else float("nan")
    return ValidationReport(tuple(items), rho_threshold=p.rho - margin, margin=margin)


def _uniform_sup(family: UniformPoly, func, grid: np.ndarray) -> tuple[float, float]:
    vals = np.array([func(t) for t in grid])
    i = int(np.nanargmax(vals))
    best_t, best_v = float(grid[i]), float(vals[i])
    lo = float(grid[max(i - 1, 0)])
    hi = float(grid[min(i + 1, len(grid) - 1)])
    if hi > lo:
        res = minimize_scalar(lambda t: -func(t), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-12})
        if res.success and -res.fun > best_v:
            best_t, best_v = float(res.x), float(-res.fun)
    return best_t, best_v


def uniform_grid(family: UniformPoly) -> np.ndarray:
    grid = np.linspace(0.0, family.a2, UNIFORM_GRID_POINTS)
    return np.unique(np.concatenate([grid, family.critical_points()]))


def validate_uniform(p: Problem) -> ValidationReport:
    """Rho bound and R L > S^2 over theta in [0, a2] for a uniform family."""
    fam = p.family
    if not isinstance(fam, UniformPoly):
        raise DomainError("validate_uniform needs a UniformPoly family")
    grid = uniform_grid(fam)
    L = fam.evaluate("L", grid)
    R = fam.evaluate("R", grid)
    items = [
        CheckItem("L_positive", bool(np.all(L > 0)), float(L.min())),
        CheckItem("R_positive", bool(np.all(R > 0)), float(R.min())),
    ]
    if np.all(R > 0):
        worst_t, sup = _uniform_sup(fam, lambda t: rho_bound(coefficients_at(fam, t)), grid)
        margin = p.rho - sup
        items.append(CheckItem("rho_bound", margin > 0, margin,
                               f"sup over theta = {sup:.6g} at theta={worst_t:.6g}"))
    else:
        worst_t, sup, margin = None, float("nan"), float("nan")
        items.append(CheckItem("rho_bound", False, float("nan"), "R not positive on grid"))

    def neg_gap(t):
        c = coefficients_at(fam, t)
        return -(c.R * c.L - c.S ** 2)

    gap_t, neg = _uniform_sup(fam, neg_gap, grid)
    items.append(CheckItem("RL_gt_S2", -neg > 0, -neg, f"min R L - S^2 at theta={gap_t:.6g}"))
    return ValidationReport(tuple(items), rho_threshold=sup, margin=margin, worst_theta=worst_t)


def validate(p: Problem) -> ValidationReport:
    """Gate used before solving: per-scenario checks for two-point, grid checks for uniform."""
    if isinstance(p.family, TwoPoint):
        return validate_scenarios(p)
    return validate_uniform(p)


def theta_nodes(family: CoefficientFamily, count: int = 5) -> list[float]:
    if isinstance(family, TwoPoint):
        return [1, 2]
    return [float(t) for t in np.linspace(0.0, family.a2, count)]


def as_polys(values: Mapping[str, float | Sequence[float]]) -> dict[str, tuple[float, ...]]:
    return {k: tuple(np.atleast_1d(np.asarray(v, dtype=float))) for k, v in values.items()}
