"""Worst-case measure search and numerical checks of the robust LQ identities."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import (CoefficientFamily, ThetaCoefficients, TwoPoint, UniformPoly, coefficients_at)
from .policy import GaussianPolicy, entropy, gaussian_from_value
from .riccati import (SolverError, ThetaValueFunction, classical_k0, entropy_offset, solve_theta)
from .sde_sim import (MCEstimate, SimConfig, discount_weights, estimate_cost_classical,
                      estimate_cost_exploratory)

A_GRID_SIZE = 101
GOLDEN_WIDTH = 1e-8
QUAD_NODES = 48
LAMBDA_GRID = np.linspace(0.0, 1.0, 21)
IDENTITY_TOL = 1e-10
MEAN_TOL = 1e-14


class ScenarioSolveError(SolverError):
    def __init__(self, scenario, cause: Exception):
        super().__init__(f"scenario theta={scenario}: {cause}")
        self.scenario = scenario
        self.cause = cause


@dataclass(frozen=True)
class RobustSolution:
    worst_case: dict
    value: float
    per_theta: dict
    argmax_trace: list = field(default_factory=list)

    @property
    def lambda_star(self):
        return self.worst_case.get("lambda_star")

    @property
    def a_star(self):
        return self.worst_case.get("a_star")


def _solve(coeffs, rho, alpha, label) -> ThetaValueFunction:
    try:
        return solve_theta(coeffs, rho, alpha)
    except (SolverError, ValueError) as exc:
        raise ScenarioSolveError(label, exc) from exc


def classical_value(coeffs: ThetaCoefficients, v: ThetaValueFunction, rho: float, alpha: float, x):
    """Classical value from the exploratory coefficients plus the entropy offset."""
    return v(x) + entropy_offset(alpha, v.variance, rho)


def robust_value_two_point(theta1: ThetaCoefficients, theta2: ThetaCoefficients, rho: float,
                           alpha: float, x: float, classical: bool = False) -> RobustSolution:
    """Worst case over the two-point family: the larger scenario value, ties to lambda*=1."""
    per = {1: _solve(theta1, rho, alpha, 1), 2: _solve(theta2, rho, alpha, 2)}
    coeffs = {1: theta1, 2: theta2}
    vals = {}
    for k, v in per.items():
        vals[k] = float(classical_value(coeffs[k], v, rho, alpha, x) if classical else v(x))
    lam = 1 if vals[1] >= vals[2] else 0
    trace = [(1, vals[1]), (0, vals[2])]
    return RobustSolution({"lambda_star": lam}, max(vals.values()), per, trace)


class _UniformAverager:
    """``(1/a) * integral_0^a g(theta) dtheta`` by Gauss-Legendre, g from solve_theta."""

    def __init__(self, family: UniformPoly, rho, alpha, x, nodes: int = QUAD_NODES, classical=False):
        self.family, self.rho, self.alpha, self.x = family, rho, alpha, x
        self.classical = classical
        self.t, self.w = np.polynomial.legendre.leggauss(nodes)
        self.per_theta: dict[float, ThetaValueFunction] = {}

    def integrand(self, theta: float) -> float:
        c = coefficients_at(self.family, theta)
        v = _solve(c, self.rho, self.alpha, theta)
        self.per_theta[theta] = v
        val = v(self.x)
        if self.classical:
            val += entropy_offset(self.alpha, v.variance, self.rho)
        return float(val)

    def average(self, a: float, func=None) -> float:
        func = func or self.integrand
        th = 0.5 * a * (self.t + 1.0)
        return 0.5 * float(np.dot(self.w, [func(t) for t in th]))


def golden_section_max(f, lo: float, hi: float, width: float = GOLDEN_WIDTH):
    """Maximize a unimodal ``f`` on ``[lo, hi]``; returns (argmax, value, evaluations)."""
    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = f(c), f(d)
    evals = [(c, fc), (d, fd)]
    while b - a > width:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
            evals.append((c, fc))
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
            evals.append((d, fd))
    best = max(evals, key=lambda e: e[1])
    return best[0], best[1], evals


def robust_value_uniform(family: UniformPoly, rho: float, alpha: float, x: float,
                         a_grid_size: int = A_GRID_SIZE, nodes: int = QUAD_NODES,
                         classical: bool = False) -> RobustSolution:
    """Worst ``a`` in ``[a1, a2]`` for the Uniform(0, a) family.

    Grid search, then golden-section refinement between the neighbours of
    the best grid point.  A refined point replaces the grid winner only if
    it is strictly better, so flat objectives keep the smallest ``a``.
    """
    avg = _UniformAverager(family, rho, alpha, x, nodes, classical)
    grid = np.linspace(family.a1, family.a2, a_grid_size)
    vals = [avg.average(a) for a in grid]
    trace = list(zip(grid.tolist(), vals))
    i = int(np.argmax(vals))
    a_star, best = float(grid[i]), vals[i]
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
    if hi > lo:
        a_ref, v_ref, evals = golden_section_max(avg.average, lo, hi)
        trace.extend(evals)
        if v_ref > best:
            a_star, best = a_ref, v_ref
    return RobustSolution({"a_star": a_star}, best, avg.per_theta, trace)


# -- minimax exchange ---------------------------------------------------------


def hamiltonian_objective(coeffs: ThetaCoefficients, alpha: float, x: float, mean: float,
                          variance: float, dv: float, d2v: float) -> float:
    """Entropy-regularized Hamiltonian of a Gaussian action N(mean, variance) at x."""
    c = coeffs
    f = 0.5 * c.L * x * x + c.S * x * mean + 0.5 * c.R * (mean * mean + variance) + c.M * x + c.N * mean
    b = c.A * x + c.B * mean
    s2 = (c.C * x + c.D * mean) ** 2 + c.D ** 2 * variance
    return f - alpha * 0.5 * np.log(2 * math.pi * math.e * variance) + dv * b + 0.5 * d2v * s2


def policy_lattice(theta1: ThetaCoefficients, theta2: ThetaCoefficients, rho: float, alpha: float,
                   x: float, n: int = 41, spread: float = 1.0) -> list[GaussianPolicy]:
    """``n x n`` constant-action Gaussians spanning both scenario optima at ``x``.

    Means cover the two optimal means widened by ``spread`` times their
    gap (at least ``spread``); variances cover ``[v_min / 4, 4 v_max]`` on
    a log scale.
    """
    opts = []
    for t in (theta1, theta2):
        p = gaussian_from_value(t, solve_theta(t, rho, alpha), alpha)
        opts.append((float(p.mean(x)), p.variance))
    means = [m for m, _ in opts]
    gap = max(max(means) - min(means), 1.0)
    m_lo, m_hi = min(means) - spread * gap, max(means) + spread * gap
    v_lo, v_hi = min(v for _, v in opts) / 4.0, max(v for _, v in opts) * 4.0
    return lattice_from_bounds(m_lo, m_hi, v_lo, v_hi, n)


def lattice_from_bounds(m_lo, m_hi, v_lo, v_hi, n) -> list[GaussianPolicy]:
    ms = np.linspace(m_lo, m_hi, n)
    vs = np.geomspace(v_lo, v_hi, n)
    return [GaussianPolicy(0.0, float(m), float(v)) for m in ms for v in vs]


@dataclass(frozen=True)
class MinimaxReport:
    inf_sup: float
    sup_inf: float
    endpoint_attained: bool
    best_policy: GaussianPolicy
    best_lambda: float

    @property
    def gap(self) -> float:
        return self.inf_sup - self.sup_inf


def minimax_table(theta1, theta2, rho, alpha, x, policy_grid: Sequence[GaussianPolicy],
                  lambdas=LAMBDA_GRID) -> np.ndarray:
    """Objective on the ``lambda x policy`` grid; rows are policies."""
    if len(policy_grid) == 0:
        raise ValueError("policy grid is empty")
    robust = robust_value_two_point(theta1, theta2, rho, alpha, x)
    v = robust.per_theta[1 if robust.lambda_star == 1 else 2]
    dv, d2v = float(v.derivative(x)), v.k2
    means = np.array([float(p.mean(x)) for p in policy_grid])
    variances = np.array([p.variance for p in policy_grid])
    h1, h2 = (hamiltonian_objective(t, alpha, x, means, variances, dv, d2v) for t in (theta1, theta2))
    lam = np.asarray(lambdas, dtype=float)
    return np.outer(h1, lam) + np.outer(h2, 1.0 - lam)


def minimax_report(theta1, theta2, rho, alpha, x, policy_grid, lambdas=LAMBDA_GRID) -> MinimaxReport:
    J = minimax_table(theta1, theta2, rho, alpha, x, policy_grid, lambdas)
    row_sup = J.max(axis=1)
    col_inf = J.min(axis=0)
    ends = np.maximum(J[:, 0], J[:, -1])
    scale = np.maximum(1.0, np.abs(ends))
    endpoint = bool(np.all(row_sup <= ends + 1e-12 * scale))
    i = int(np.argmin(row_sup))
    j = int(np.argmax(col_inf))
    return MinimaxReport(float(row_sup[i]), float(col_inf[j]), endpoint, policy_grid[i], float(lambdas[j]))


def minimax_gap(theta1, theta2, rho, alpha, x, policy_grid, lambdas=LAMBDA_GRID) -> float:
    """inf over policies of sup over lambda, minus sup-inf, on the given grids."""
    return minimax_report(theta1, theta2, rho, alpha, x, policy_grid, lambdas).gap


def refined_lattice(report: MinimaxReport, policy_grid: Sequence[GaussianPolicy], n: int,
                    factor: int = 2) -> list[GaussianPolicy]:
    """Lattice ``factor`` times finer, recentred on the current inf-sup policy."""
    ms = sorted({p.mean_intercept for p in policy_grid})
    vs = sorted({p.variance for p in policy_grid})
    dm = (ms[-1] - ms[0]) / (len(ms) - 1)
    lr = math.log(vs[-1] / vs[0]) / (len(vs) - 1)
    m0, v0 = report.best_policy.mean_intercept, report.best_policy.variance
    half = (n - 1) / 2 / factor
    return lattice_from_bounds(m0 - half * dm, m0 + half * dm,
                               v0 * math.exp(-half * lr), v0 * math.exp(half * lr), n)


def refined_lambdas(report: MinimaxReport, lambdas=LAMBDA_GRID, factor: int = 2) -> np.ndarray:
    """lambda-grid ``factor`` times finer around the sup-inf lambda.

    0, 1 and the current sup-inf lambda are always kept.
    """
    lam = np.asarray(lambdas, dtype=float)
    step = (lam[-1] - lam[0]) / (lam.size - 1)
    half = (lam.size - 1) / 2 * step / factor
    c = report.best_lambda
    lo, hi = max(0.0, c - half), min(1.0, c + half)
    return np.unique(np.concatenate([[0.0, c, 1.0], np.linspace(lo, hi, lam.size)]))


# -- exploration cost, solvability equivalence, alpha limit --------------------


@dataclass(frozen=True)
class ExplorationCost:
    value: float
    target: float
    exploratory_value: float
    entropy_term: float
    classical_value: float
    worst_case: dict
    classical_worst_case: dict
    flagged: bool

    @property
    def deviation(self) -> float:
        return self.value - self.target

    @property
    def identity_holds(self) -> bool:
        return abs(self.deviation) < IDENTITY_TOL


def _entropy_term(alpha, rho, v: ThetaValueFunction) -> float:
    # alpha * integral of e^{-rho t} H(pi*) dt for a constant-variance policy
    return alpha / (2 * rho) * math.log(2 * math.pi * math.e * v.variance)


def exploration_cost(family: CoefficientFamily, rho: float, alpha: float, x: float) -> ExplorationCost:
    """Exploratory value plus discounted entropy bonus minus the classical value.

    Both robust values are maximized separately; ``flagged`` is set when
    their worst cases differ.  The entropy term is taken under the
    exploratory worst case.
    """
    target = -alpha / (2 * rho)
    if isinstance(family, TwoPoint):
        ex = robust_value_two_point(family.theta1, family.theta2, rho, alpha, x)
        cl = robust_value_two_point(family.theta1, family.theta2, rho, alpha, x, classical=True)
        v = ex.per_theta[1 if ex.lambda_star == 1 else 2]
        ent = _entropy_term(alpha, rho, v)
    else:
        ex = robust_value_uniform(family, rho, alpha, x)
        cl = robust_value_uniform(family, rho, alpha, x, classical=True)
        avg = _UniformAverager(family, rho, alpha, x)
        ent = avg.average(ex.a_star, lambda th: _entropy_term(
            alpha, rho, solve_theta(coefficients_at(family, th), rho, alpha)))
    value = ex.value + ent - cl.value
    flagged = ex.worst_case != cl.worst_case
    return ExplorationCost(value, target, ex.value, ent, cl.value, ex.worst_case, cl.worst_case, flagged)


@dataclass(frozen=True)
class MCExplorationCost:
    value: float
    std_error: float
    target: float
    exploratory: MCEstimate
    classical: MCEstimate
    entropy_term: float

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.value - target) <= k * self.std_error


def exploration_cost_mc(coeffs: ThetaCoefficients, rho: float, alpha: float, x: float,
                        cfg: SimConfig) -> MCExplorationCost:
    """Monte-Carlo version for one scenario; entropy term truncated at the same horizon."""
    v = solve_theta(coeffs, rho, alpha)
    p = gaussian_from_value(coeffs, v, alpha)
    ex = estimate_cost_exploratory(coeffs, p, x, rho, alpha, cfg)
    cl = estimate_cost_classical(coeffs, p.mean_slope, p.mean_intercept, x, rho, cfg)
    ent = alpha * entropy(p) * float(np.sum(discount_weights(rho, cfg.dt, cfg.n_steps)))
    value = ex.mean + ent - cl.mean
    se = math.hypot(ex.std_error, cl.std_error)
    return MCExplorationCost(value, se, -alpha / (2 * rho), ex, cl, ent)


def classical_feedback(coeffs: ThetaCoefficients, v: ThetaValueFunction, x):
    """Classical optimal feedback, written out independently of the policy module."""
    k2, k1 = v.k2, v.k1
    num = x * (coeffs.S + coeffs.B * k2 + coeffs.C * coeffs.D * k2) + coeffs.N + coeffs.B * k1
    return -num / (coeffs.R + coeffs.D ** 2 * k2)


@dataclass(frozen=True)
class EquivalenceReport:
    slope_diff: float
    intercept_diff: float
    classical_value: float
    direct_classical_value: float
    mc: MCEstimate | None

    @property
    def means_match(self) -> bool:
        return self.slope_diff <= MEAN_TOL and self.intercept_diff <= MEAN_TOL

    @property
    def mc_match(self) -> bool:
        return self.mc is None or self.mc.within(self.classical_value)

    @property
    def passed(self) -> bool:
        return self.means_match and self.mc_match


def worst_case_scenario(family: TwoPoint, rho: float, alpha: float, x: float) -> ThetaCoefficients:
    sol = robust_value_two_point(family.theta1, family.theta2, rho, alpha, x)
    return family.theta1 if sol.lambda_star == 1 else family.theta2


def solvability_equivalence_check(coeffs: ThetaCoefficients | TwoPoint, rho: float, alpha: float,
                                  x: float, cfg: SimConfig | None = None) -> EquivalenceReport:
    """Classical value and feedback recovered from the exploratory solution.

    The classical value is the exploratory quadratic plus the entropy
    offset; ``direct_classical_value`` recomputes it from the classical
    constant term alone.  With ``cfg`` the classical cost of the feedback is
    also estimated by Monte Carlo.  A two-point family is checked on its
    worst-case scenario at ``x``.
    """
    if isinstance(coeffs, TwoPoint):
        coeffs = worst_case_scenario(coeffs, rho, alpha, x)
    v = solve_theta(coeffs, rho, alpha)
    p = gaussian_from_value(coeffs, v, alpha)
    u0, u1 = classical_feedback(coeffs, v, 0.0), classical_feedback(coeffs, v, 1.0)
    slope_diff = abs((u1 - u0) - p.mean_slope)
    intercept_diff = abs(u0 - p.mean_intercept)
    value = float(classical_value(coeffs, v, rho, alpha, x))
    direct = 0.5 * v.k2 * x * x + v.k1 * x + classical_k0(coeffs, v, rho)
    mc = None
    if cfg is not None:
        mc = estimate_cost_classical(coeffs, u1 - u0, u0, x, rho, cfg)
    return EquivalenceReport(slope_diff, intercept_diff, value, direct, mc)


@dataclass(frozen=True)
class AlphaLimitReport:
    alphas: tuple
    slope_drift: float
    intercept_drift: float
    k2_drift: float
    k1_drift: float
    variance_ratio_drift: float
    offset_error: float
    displayed_offset_error: float
    k0: tuple

    def passed(self, tol: float = 1e-12) -> bool:
        return max(self.slope_drift, self.intercept_drift, self.variance_ratio_drift, self.offset_error) <= tol


def _spread(vals) -> float:
    return float(max(vals) - min(vals))


def alpha_limit_check(coeffs: ThetaCoefficients, rho: float, alphas: Sequence[float]) -> AlphaLimitReport:
    """How the solution moves as the exploration weight shrinks.

    ``offset_error`` compares consecutive k0 differences with the entropy
    offset ``alpha (ln(2 pi e var) - 1) / (2 rho)``; ``displayed_offset_error``
    does the same with ``+1`` in place of ``-1``.
    """
    sols = [solve_theta(coeffs, rho, a) for a in alphas]
    pols = [gaussian_from_value(coeffs, v, a) for v, a in zip(sols, alphas)]
    gain = [coeffs.R + coeffs.D ** 2 * v.k2 for v in sols]

    def offset(a, g, sign):
        return -a * (math.log(2 * math.pi * math.e * a / g) + sign) / (2 * rho)

    err = disp = 0.0
    for i in range(1, len(alphas)):
        dk0 = sols[i].k0 - sols[i - 1].k0
        err = max(err, abs(dk0 - (offset(alphas[i], gain[i], -1) - offset(alphas[i - 1], gain[i - 1], -1))))
        disp = max(disp, abs(dk0 - (offset(alphas[i], gain[i], 1) - offset(alphas[i - 1], gain[i - 1], 1))))
    return AlphaLimitReport(
        alphas=tuple(alphas),
        slope_drift=_spread([p.mean_slope for p in pols]),
        intercept_drift=_spread([p.mean_intercept for p in pols]),
        k2_drift=_spread([v.k2 for v in sols]),
        k1_drift=_spread([v.k1 for v in sols]),
        variance_ratio_drift=_spread([p.variance / a for p, a in zip(pols, alphas)]),
        offset_error=err,
        displayed_offset_error=disp,
        k0=tuple(v.k0 for v in sols),
    )
