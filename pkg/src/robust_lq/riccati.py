"""Quadratic value functions of the entropy-regularized LQ problem.

Single scenario: ``v(x) = k2 x^2 / 2 + k1 x + k0`` where ``k2`` solves
``a~ k^2 + b~ k + c~ = 0``.  Two scenarios: the coupled quadratic ansatz
``V(x1, x2) = k21 x1^2/2 + k22 x2^2/2 + k11 x1 + k12 x2 + c`` and its
seven coefficient-matching equations, solved by branch enumeration plus a
damped Gauss-Newton polish.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import ThetaCoefficients

TWO_PI_E = 2.0 * math.pi * math.e
HJB_TOL = 1e-8
EQUATION_TOL = 1e-8
PROBE_POINTS = 21

NEWTON_MAX_ITER = 200
NEWTON_MAX_HALVINGS = 40
NEWTON_FTOL = 1e-12
NEWTON_STEPTOL = 1e-14


class SolverError(ArithmeticError):
    """Base class for failures of the value-function solvers."""


class NoRealSolutionError(SolverError):
    pass


class InadmissibleRootError(SolverError):
    pass


class DegenerateQuadraticError(SolverError):
    pass


class SingularSystemError(SolverError):
    pass


class NoSolutionError(SolverError):
    def __init__(self, message: str, branch_residuals: dict[int, float]):
        super().__init__(f"{message}; per-branch final residuals: {branch_residuals}")
        self.branch_residuals = branch_residuals


# -- single scenario ----------------------------------------------------------


def quadratic_roots(a: float, b: float, c: float) -> list[tuple[float, str]]:
    """Real roots of ``a k^2 + b k + c``, ordered (minus, plus) branch.

    The minus branch is ``(-b - sqrt(b^2 - 4ac)) / (2a)``.  Evaluated in the
    cancellation-free form; when ``a == 0`` the single linear root is
    labelled with the branch it is the limit of.
    """
    if a == 0.0:
        if b == 0.0:
            raise DegenerateQuadraticError("quadratic and linear coefficients both vanish")
        return [(-c / b, "minus" if b < 0 else "plus")]
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        if disc > -1e-14 * max(b * b, abs(4.0 * a * c)):
            disc = 0.0
        else:
            raise NoRealSolutionError(f"negative discriminant {disc:.6g}")
    sq = math.sqrt(disc)
    q = -0.5 * (b + math.copysign(sq, b) if b != 0.0 else sq)
    if q == 0.0:
        return [(0.0, "minus"), (0.0, "plus")]
    r_big, r_small = q / a, c / q
    # b >= 0: q/a is the minus root; b < 0: c/q is.
    if b >= 0.0:
        return [(r_big, "minus"), (r_small, "plus")]
    return [(r_small, "minus"), (r_big, "plus")]


def riccati_coefficients(c: ThetaCoefficients, rho: float) -> tuple[float, float, float]:
    e = c.C ** 2 + 2.0 * c.A - rho
    beta = c.B + c.C * c.D
    a_t = e * c.D ** 2 - beta ** 2
    b_t = e * c.R - 2.0 * c.S * beta + c.D ** 2 * c.L
    c_t = c.R * c.L - c.S ** 2
    return a_t, b_t, c_t


def entropy_offset(alpha: float, variance: float, rho: float) -> float:
    """Amount by which the exploratory k0 sits below the classical one.

    The entropy-optimal Gaussian contributes ``alpha/2 - alpha/2 ln(2 pi e var)``
    per unit time, so the offset is ``alpha (ln(2 pi e var) - 1) / (2 rho)``.
    """
    return alpha * (math.log(TWO_PI_E * variance) - 1.0) / (2.0 * rho)


@dataclass(frozen=True)
class ThetaValueFunction:
    k2: float
    k1: float
    k0: float
    a_tilde: float
    b_tilde: float
    c_tilde: float
    variance: float
    branch: str = "minus"
    rejected: tuple[tuple[float, str], ...] = ()

    def __call__(self, x):
        return 0.5 * self.k2 * np.square(x) + self.k1 * x + self.k0

    def derivative(self, x):
        return self.k2 * x + self.k1

    @property
    def coefficients(self) -> tuple[float, float, float]:
        return self.k2, self.k1, self.k0


def solve_theta(coeffs: ThetaCoefficients, rho: float, alpha: float) -> ThetaValueFunction:
    """Closed-form value function of one scenario."""
    a_t, b_t, c_t = riccati_coefficients(coeffs, rho)
    roots = quadratic_roots(a_t, b_t, c_t)
    rejected = []
    if a_t == 0.0 and roots[0][1] == "plus":
        rejected.append((math.inf, "minus root escapes to infinity (a~ = 0, b~ > 0)"))
    chosen = None
    for k2, label in roots:
        gain = coeffs.R + coeffs.D ** 2 * k2
        if not math.isfinite(k2):
            rejected.append((k2, "non-finite root"))
        elif gain <= 0.0:
            rejected.append((k2, f"R + D^2 k2 = {gain:.6g} <= 0"))
        elif chosen is None:
            chosen = (k2, label, gain)
        else:
            rejected.append((k2, "admissible; not selected (minus branch preferred)"))
    if chosen is None:
        raise InadmissibleRootError(f"no root with R + D^2 k2 > 0; tried {rejected}")
    k2, label, gain = chosen

    g = coeffs.S + (coeffs.B + coeffs.C * coeffs.D) * k2
    den = gain * (rho - coeffs.A) + coeffs.B * g
    if den == 0.0:
        raise SingularSystemError("linear coefficient equation is singular")
    k1 = (gain * coeffs.M - coeffs.N * g) / den
    variance = alpha / gain
    k0 = -(coeffs.N + coeffs.B * k1) ** 2 / (2.0 * rho * gain) - entropy_offset(alpha, variance, rho)
    return ThetaValueFunction(k2, k1, k0, a_t, b_t, c_t, variance, label, tuple(rejected))


def classical_k0(coeffs: ThetaCoefficients, v: ThetaValueFunction, rho: float) -> float:
    gain = coeffs.R + coeffs.D ** 2 * v.k2
    return -(coeffs.N + coeffs.B * v.k1) ** 2 / (2.0 * rho * gain)


def _quad(v) -> tuple[float, float, float]:
    if isinstance(v, ThetaValueFunction):
        return v.coefficients
    k2, k1, k0 = v
    return float(k2), float(k1), float(k0)


def hjb_residual(v, coeffs: ThetaCoefficients, rho: float, alpha: float, x):
    """``rho v(x)`` minus the minimized Hamiltonian; zero iff ``v`` solves the HJB.

    ``v`` is a ThetaValueFunction or a ``(k2, k1, k0)`` triple; ``x`` may be
    an array.
    """
    k2, k1, k0 = _quad(v)
    gain = coeffs.R + coeffs.D ** 2 * k2
    if gain <= 0.0:
        raise ValueError(f"variance undefined: R + D^2 k2 = {gain:.6g} <= 0")
    x = np.asarray(x, dtype=float)
    variance = alpha / gain
    vp = k2 * x + k1
    lin = coeffs.S * x + coeffs.N + coeffs.B * vp + coeffs.C * coeffs.D * x * k2
    rhs = (-lin ** 2 / (2.0 * gain) + 0.5 * coeffs.L * x ** 2 + coeffs.M * x + vp * coeffs.A * x
           + 0.5 * k2 * coeffs.C ** 2 * x ** 2 - 0.5 * alpha * (math.log(TWO_PI_E * variance) - 1.0))
    return rho * (0.5 * k2 * x ** 2 + k1 * x + k0) - rhs


def probe_grid(bound: float, n: int = PROBE_POINTS) -> np.ndarray:
    return np.linspace(-bound, bound, n)


def max_hjb_residual(v, coeffs, rho, alpha, bound: float = 1.0) -> float:
    return float(np.max(np.abs(hjb_residual(v, coeffs, rho, alpha, probe_grid(bound)))))


def moment_rate(coeffs: ThetaCoefficients, slope: float) -> float:
    """Growth rate of E[X^2] under a linear feedback with the given slope."""
    return 2.0 * (coeffs.A + coeffs.B * slope) + (coeffs.C + coeffs.D * slope) ** 2


# -- two scenarios ------------------------------------------------------------

UNKNOWNS = ("k21", "k22", "k11", "k12", "k0")


@dataclass(frozen=True)
class TwoPointSolution:
    lam: float
    k21: float
    k22: float
    k11: float
    k12: float
    k0: float
    branch_id: int
    residual: float
    equation_residual: float = float("nan")
    method: str = "numeric"
    variance_positive: bool = True
    moment_rates: tuple[float, float] = (float("nan"), float("nan"))
    intermediates: dict = field(default_factory=dict, compare=False)

    @property
    def z(self) -> np.ndarray:
        return np.array([self.k21, self.k22, self.k11, self.k12, self.k0])

    def value(self, x1, x2):
        return 0.5 * self.k21 * x1 ** 2 + 0.5 * self.k22 * x2 ** 2 + self.k11 * x1 + self.k12 * x2 + self.k0

    def swapped(self) -> TwoPointSolution:
        i, j = divmod(self.branch_id, 2)
        return TwoPointSolution(1.0 - self.lam, self.k22, self.k21, self.k12, self.k11, self.k0,
                                2 * j + i, self.residual, self.equation_residual, self.method,
                                self.variance_positive, self.moment_rates[::-1], self.intermediates)


def _mix(t1, t2, lam):
    w1, w2 = lam, 1.0 - lam
    return {
        "w1": w1, "w2": w2,
        "R": w1 * t1.R + w2 * t2.R,
        "N": w1 * t1.N + w2 * t2.N,
        "e1": 2 * w1 * t1.A + w1 * t1.C ** 2 - 0.0,
        "e2": 2 * w2 * t2.A + w2 * t2.C ** 2 - 0.0,
        "beta1": t1.B + t1.C * t1.D,
        "beta2": t2.B + t2.C * t2.D,
    }


def coefficient_equations(z, t1: ThetaCoefficients, t2: ThetaCoefficients, lam: float,
                       rho: float, alpha: float) -> np.ndarray:
    """The seven coefficient-matching equations of the two-scenario HJB.

    Rows: x1*x2 and x2*x1 cross terms, x1^2, x2^2, x1, x2, constant.  Each
    row is ``a * (Hamiltonian - rho V)`` collected on one monomial, with
    ``a = R~ + lambda D1^2 k21 + (1-lambda) D2^2 k22``.  Accepts complex ``z``
    for complex-step differentiation.
    """
    k21, k22, k11, k12, c = z
    m = _mix(t1, t2, lam)
    w1, w2 = m["w1"], m["w2"]
    a = m["R"] + w1 * t1.D ** 2 * k21 + w2 * t2.D ** 2 * k22
    g1 = w1 * (t1.S + m["beta1"] * k21)
    g2 = w2 * (t2.S + m["beta2"] * k22)
    h = m["N"] + w1 * t1.B * k11 + w2 * t2.B * k12
    e1 = m["e1"] - rho
    e2 = m["e2"] - rho
    eqs = [
        g1 * g2,
        g2 * g1,
        a * (e1 * k21 + w1 * t1.L) - g1 ** 2,
        a * (e2 * k22 + w2 * t2.L) - g2 ** 2,
        a * (w1 * t1.M - (rho - w1 * t1.A) * k11) - g1 * h,
        a * (w2 * t2.M - (rho - w2 * t2.A) * k12) - g2 * h,
    ]
    if np.real(a) > 0:
        eqs.append(a * rho * c + 0.5 * h ** 2 + 0.5 * a * alpha * (np.log(TWO_PI_E * alpha / a) - 1.0))
    else:
        eqs.append(np.nan)
    return np.array(eqs)


def two_point_hjb_residual(z, t1, t2, lam, rho, alpha, x1, x2):
    """``rho V - H`` of the reduced two-scenario HJB at states (x1, x2)."""
    k21, k22, k11, k12, c = (float(v) for v in z)
    w1, w2 = lam, 1.0 - lam
    a = w1 * t1.R + w2 * t2.R + w1 * t1.D ** 2 * k21 + w2 * t2.D ** 2 * k22
    if a <= 0.0:
        return np.full(np.broadcast(x1, x2).shape, np.inf)
    v1p = k21 * x1 + k11
    v2p = k22 * x2 + k12
    lin = (w1 * t1.S * x1 + w2 * t2.S * x2 + w1 * t1.N + w2 * t2.N
           + w1 * t1.B * v1p + w2 * t2.B * v2p
           + w1 * t1.C * t1.D * k21 * x1 + w2 * t2.C * t2.D * k22 * x2)
    ham = (0.5 * w1 * t1.L * x1 ** 2 + 0.5 * w2 * t2.L * x2 ** 2 + w1 * t1.M * x1 + w2 * t2.M * x2
           + w1 * t1.A * x1 * v1p + w2 * t2.A * x2 * v2p
           + 0.5 * (w1 * t1.C ** 2 * k21 * x1 ** 2 + w2 * t2.C ** 2 * k22 * x2 ** 2)
           - 0.5 * alpha * (math.log(TWO_PI_E * alpha / a) - 1.0) - lin ** 2 / (2.0 * a))
    value = 0.5 * k21 * x1 ** 2 + 0.5 * k22 * x2 ** 2 + k11 * x1 + k12 * x2 + c
    return rho * value - ham


def max_two_point_residual(z, t1, t2, lam, rho, alpha, bound: float = 1.0) -> float:
    g = probe_grid(bound)
    x1, x2 = np.meshgrid(g, g)
    return float(np.max(np.abs(two_point_hjb_residual(z, t1, t2, lam, rho, alpha, x1, x2))))


def _seed_roots(t_self, t_other, w_self, w_other, R_mix, rho) -> list[tuple[float, str]]:
    # Own quadratic with the other curvature frozen at zero.
    e = 2 * w_self * t_self.A + w_self * t_self.C ** 2 - rho
    beta = t_self.B + t_self.C * t_self.D
    q2 = w_self * t_self.D ** 2 * e - w_self ** 2 * beta ** 2
    q1 = R_mix * e + w_self ** 2 * t_self.D ** 2 * t_self.L - 2 * w_self ** 2 * t_self.S * beta
    q0 = R_mix * w_self * t_self.L - w_self ** 2 * t_self.S ** 2
    try:
        return quadratic_roots(q2, q1, q0)
    except (NoRealSolutionError, DegenerateQuadraticError):
        return []


def _linear_and_constant(k21, k22, t1, t2, lam, rho, alpha):
    w1, w2 = lam, 1.0 - lam
    R_mix = w1 * t1.R + w2 * t2.R
    N_mix = w1 * t1.N + w2 * t2.N
    a = R_mix + w1 * t1.D ** 2 * k21 + w2 * t2.D ** 2 * k22
    g1 = w1 * (t1.S + (t1.B + t1.C * t1.D) * k21)
    g2 = w2 * (t2.S + (t2.B + t2.C * t2.D) * k22)
    mat = np.array([
        [-a * (rho - w1 * t1.A) - g1 * w1 * t1.B, -g1 * w2 * t2.B],
        [-g2 * w1 * t1.B, -a * (rho - w2 * t2.A) - g2 * w2 * t2.B],
    ])
    rhs = np.array([-a * w1 * t1.M + g1 * N_mix, -a * w2 * t2.M + g2 * N_mix])
    if abs(np.linalg.det(mat)) < 1e-300:
        raise SingularSystemError("linear system for (k11, k12) is singular")
    k11, k12 = np.linalg.solve(mat, rhs)
    if a <= 0.0:
        raise InadmissibleRootError(f"R~ + D'Lambda K2 D = {a:.6g} <= 0")
    h = N_mix + w1 * t1.B * k11 + w2 * t2.B * k12
    c = -(0.5 * h ** 2 + 0.5 * a * alpha * (math.log(TWO_PI_E * alpha / a) - 1.0)) / (a * rho)
    return np.array([k21, k22, k11, k12, c])


def _complex_step_jacobian(func, z, h=1e-30):
    n = len(z)
    cols = []
    for i in range(n):
        zc = z.astype(complex)
        zc[i] += 1j * h
        cols.append(np.imag(func(zc)) / h)
    return np.column_stack(cols)


def damped_newton(func, z0, max_iter: int = NEWTON_MAX_ITER):
    """Gauss-Newton with step halving on an overdetermined square-free system.

    Returns (z, max abs residual, iterations, converged).
    """
    z = np.asarray(z0, dtype=float)
    f = np.real(func(z))
    if not np.all(np.isfinite(f)):
        return z, math.inf, 0, False
    it = 0
    for it in range(1, max_iter + 1):
        if np.max(np.abs(f)) < NEWTON_FTOL:
            return z, float(np.max(np.abs(f))), it - 1, True
        J = _complex_step_jacobian(func, z)
        step = np.linalg.lstsq(J, -f, rcond=None)[0]
        norm0 = np.linalg.norm(f)
        t = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            z_new = z + t * step
            f_new = np.real(func(z_new))
            if np.all(np.isfinite(f_new)) and np.linalg.norm(f_new) < norm0:
                break
            t *= 0.5
        else:
            break
        z, f = z_new, f_new
        if np.linalg.norm(t * step) < NEWTON_STEPTOL:
            break
    res = float(np.max(np.abs(f)))
    return z, res, it, res < NEWTON_FTOL


def _make_solution(z, t1, t2, lam, rho, alpha, branch_id, bound, method="numeric",
                   eq_res=None, intermediates=None) -> TwoPointSolution:
    w1, w2 = lam, 1.0 - lam
    k21, k22 = z[0], z[1]
    a = w1 * t1.R + w2 * t2.R + w1 * t1.D ** 2 * k21 + w2 * t2.D ** 2 * k22
    rates = (float("nan"), float("nan"))
    if a > 0:
        s1 = -w1 * (t1.S + (t1.B + t1.C * t1.D) * k21) / a
        s2 = -w2 * (t2.S + (t2.B + t2.C * t2.D) * k22) / a
        rates = (moment_rate(t1, s1), moment_rate(t2, s2))
    if eq_res is None:
        eq = coefficient_equations(z, t1, t2, lam, rho, alpha)
        eq_res = float(np.max(np.abs(eq))) if np.all(np.isfinite(eq)) else math.inf
    return TwoPointSolution(
        lam=lam, k21=float(z[0]), k22=float(z[1]), k11=float(z[2]), k12=float(z[3]), k0=float(z[4]),
        branch_id=branch_id,
        residual=max_two_point_residual(z, t1, t2, lam, rho, alpha, bound),
        equation_residual=eq_res, method=method, variance_positive=bool(a > 0),
        moment_rates=rates, intermediates=intermediates or {},
    )


def _rank(sol: TwoPointSolution, rho: float):
    weights = (sol.lam, 1.0 - sol.lam)
    transversal = all(w == 0 or (math.isfinite(r) and r < rho) for w, r in zip(weights, sol.moment_rates))
    return (not sol.variance_positive, not transversal,
            sol.residual if sol.residual > HJB_TOL else 0.0, sol.branch_id)


def solve_two_point_numeric(theta1: ThetaCoefficients, theta2: ThetaCoefficients, lam: float,
                            rho: float, alpha: float, bound: float = 1.0) -> list[TwoPointSolution]:
    """All branches of the two-scenario system with equation residual <= 1e-8.

    Seeds are the roots of each scenario's own quadratic with the other
    curvature set to zero; at lambda in {0, 1} these are exact and the
    polish is a no-op.  Branches are ordered by: positive variance, second
    moment growing slower than rho, HJB residual (ties within tolerance
    count as equal), then branch id with the minus root first.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"lambda must lie in [0, 1], got {lam}")
    w1, w2 = lam, 1.0 - lam
    R_mix = w1 * theta1.R + w2 * theta2.R
    roots1 = _seed_roots(theta1, theta2, w1, w2, R_mix, rho)
    roots2 = _seed_roots(theta2, theta1, w2, w1, R_mix, rho)

    def eqs(z):
        return coefficient_equations(z, theta1, theta2, lam, rho, alpha)

    found: list[TwoPointSolution] = []
    failures: dict[int, float] = {}
    for i, (k21, _) in enumerate(roots1):
        for j, (k22, _) in enumerate(roots2):
            bid = 2 * i + j
            try:
                z0 = _linear_and_constant(k21, k22, theta1, theta2, lam, rho, alpha)
            except SolverError as exc:
                failures[bid] = math.inf
                continue
            z, res, _, _ = damped_newton(eqs, z0)
            if not res <= EQUATION_TOL:
                failures[bid] = res
                continue
            sol = _make_solution(z, theta1, theta2, lam, rho, alpha, bid, bound, eq_res=res)
            if any(np.max(np.abs(sol.z - other.z)) < 1e-8 for other in found):
                continue
            found.append(sol)
    if not found:
        raise NoSolutionError(f"no branch converged at lambda={lam}", failures)
    return sorted(found, key=lambda s: _rank(s, rho))


def solve_two_point_closed(theta1: ThetaCoefficients, theta2: ThetaCoefficients, lam: float,
                           rho: float, alpha: float, bound: float = 1.0) -> TwoPointSolution:
    """Explicit two-scenario closed form, kept as an unverified reference.

    Only the evident ``C_1 D-1`` in P1 is read as ``C1 D1``.  Quantities
    carrying a zero lambda-weight are set to zero without being evaluated.
    The result is not trusted: ``residual`` records its HJB residual and
    ``compare_two_point`` reports its distance to the numeric branches.
    """
    t1, t2 = theta1, theta2
    w1, w2 = lam, 1.0 - lam
    B1, C1, D1, S1, A1 = t1.B, t1.C, t1.D, t1.S, t1.A
    B2, C2, D2, S2, A2 = t2.B, t2.C, t2.D, t2.S, t2.A
    den_v2 = (B1 * B2 + C1 * D1 * B2 + C1 * C2 * D1 * D2) * (S1 * B2 + C2 * D2 * S1)
    den_v1 = (B1 * B2 + C2 * D2 * B1 + C1 * C2 * D1 * D2) * (S2 * B1 + C1 * D1 * S2)
    inter: dict[str, float] = {}

    def ratio(num, den, name):
        if den == 0.0:
            raise DegenerateQuadraticError(f"{name} undefined: denominator vanishes")
        return num / den

    R_mix = w1 * t1.R + w2 * t2.R
    N_mix = w1 * t1.N + w2 * t2.N

    def curvature(idx):
        w, wo = (w1, w2) if idx == 1 else (w2, w1)
        t, to = (t1, t2) if idx == 1 else (t2, t1)
        if w == 0.0:
            return 0.0
        B, C, D, S, A, L, R = t.B, t.C, t.D, t.S, t.A, t.L, t.R
        F = 2 * w * D ** 2 * (w * A - rho / 2) - w ** 2 * B ** 2 - 2 * w ** 2 * C * D * B
        if wo != 0.0:
            U_other = ratio(den_v1, den_v2, "U2") if idx == 1 else ratio(den_v2, den_v1, "U1")
            inter[f"U{3 - idx}"] = U_other
            F += 2 * wo * to.D ** 2 * (w * A + w / 2 * C ** 2 - rho / 2) * U_other
        G = w * (w * D ** 2 * L - 2 * w * S * B - 2 * w * C * D * S + 4 * R * (w * A + w / 2 * C ** 2 - rho / 2))
        if idx == 1:
            V = ratio(S1 * S2 * (C1 * D1 * B2 - C2 * D2 * B1), den_v1, "V1")
        else:
            V = ratio(S1 * S2 * (C2 * D2 * B1 - C1 * D1 * B2), den_v2, "V2")
        H = -w ** 2 * (S ** 2 + D ** 2 * L * V)
        inter.update({f"F{idx}": F, f"G{idx}": G, f"H{idx}": H, f"V{idx}": V})
        if F == 0.0:
            raise DegenerateQuadraticError(f"F{idx} = 0")
        disc = G ** 2 - 4 * F * H
        if disc < 0.0:
            raise NoRealSolutionError(f"G{idx}^2 - 4 F{idx} H{idx} = {disc:.6g} < 0")
        return math.sqrt(w) * (G - math.sqrt(disc)) / (2 * F)

    k21 = curvature(1)
    k22 = curvature(2)
    aK = R_mix + w1 * D1 ** 2 * k21 + w2 * D2 ** 2 * k22

    def linear(idx):
        w = w1 if idx == 1 else w2
        if w == 0.0:
            return 0.0
        t = t1 if idx == 1 else t2
        k = k21 if idx == 1 else k22
        O = 2 * aK * (rho - w * t.A) + 2 * w ** 2 * t.B * (t.S + k + t.C * t.D * k)
        Pq = (2 * aK * t.M - 2 * t.S * N_mix
              - 2 * t.N * (w1 * (B1 + C1 * D1) * k21 + w2 * (B2 + C2 * D2) * k22))
        inter.update({f"O{idx}": O, f"P{idx}": Pq})
        if O == 0.0:
            raise SingularSystemError(f"O{idx} = 0")
        return w * Pq / O

    k11 = linear(1)
    k12 = linear(2)
    if aK <= 0.0:
        raise InadmissibleRootError(f"R~ + D'K2 Lambda D = {aK:.6g} <= 0")
    BK1 = w1 * B1 * k11 + w2 * B2 * k12
    k0 = (-(N_mix ** 2 + 2 * N_mix * BK1 + BK1 ** 2) / (2 * aK * rho)
          - alpha / 2 * math.log(math.e ** 2 * math.pi * alpha / aK))
    z = np.array([k21, k22, k11, k12, k0])
    return _make_solution(z, t1, t2, lam, rho, alpha, branch_id=0, bound=bound,
                          method="closed", intermediates=inter)


def compare_two_point(closed: TwoPointSolution, branches: Sequence[TwoPointSolution],
                      tol: float = 1e-8) -> dict:
    """Distance of the closed form to the nearest numeric branch."""
    dists = [float(np.max(np.abs(closed.z - b.z))) for b in branches]
    i = int(np.argmin(dists))
    diff = closed.z - branches[i].z
    return {
        "nearest_branch": branches[i].branch_id,
        "max_abs_diff": dists[i],
        "diff": dict(zip(UNKNOWNS, (float(d) for d in diff))),
        "agree": dists[i] <= tol,
        "closed_residual": closed.residual,
    }
