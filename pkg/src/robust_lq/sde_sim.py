"""Euler-Maruyama simulation of classical and exploratory state dynamics.

Paths are processed in fixed blocks of ``BLOCK_SIZE``.  Block ``b`` draws
from ``SeedSequence(seed, spawn_key=(b,))``, so an estimate depends only
on (seed, n_paths, dt, horizon), never on how many workers run the blocks.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .model import DomainError, ThetaCoefficients
from .policy import GaussianPolicy, entropy

BLOCK_SIZE = 4096
DIVERGENCE_BOUND = 1e12
MAX_DIVERGED_FRACTION = 1e-3
DEFAULT_TAIL = 1e-4


class PropagationError(ArithmeticError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    n_paths: int
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if not self.dt > 0:
            raise DomainError(f"dt must be positive, got {self.dt}")
        if self.n_paths < 1:
            raise DomainError(f"n_paths must be >= 1, got {self.n_paths}")
        steps = self.horizon / self.dt
        if not self.horizon > 0 or abs(steps - round(steps)) > 1e-9 * max(steps, 1.0):
            raise DomainError(f"horizon {self.horizon} is not a whole number of steps of {self.dt}")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must be an unsigned 64-bit integer")

    @classmethod
    def for_discount(cls, rho: float, dt: float, n_paths: int, seed: int = 0,
                     tail: float = DEFAULT_TAIL, workers: int = 1) -> SimConfig:
        """Horizon ``ln(1/tail)/rho`` rounded up to a whole number of steps."""
        steps = math.ceil(round(math.log(1.0 / tail) / rho / dt, 9))
        return cls(dt, steps * dt, n_paths, seed, workers)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def truncation_factor(self, rho: float) -> float:
        """``exp(-rho T)``: relative weight of the discarded tail."""
        return math.exp(-rho * self.horizon)

    def replace(self, **kw) -> SimConfig:
        d = dict(dt=self.dt, horizon=self.horizon, n_paths=self.n_paths, seed=self.seed, workers=self.workers)
        d.update(kw)
        return SimConfig(**d)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    std_error: float
    n_paths: int
    dt: float
    horizon: float
    n_diverged: int = 0

    @property
    def valid(self) -> bool:
        return self.n_diverged <= MAX_DIVERGED_FRACTION * self.n_paths and math.isfinite(self.mean)

    def within(self, target: float, k: float = 3.0) -> bool:
        return abs(self.mean - target) <= k * self.std_error


def _check_finite(*vals):
    for v in vals:
        if not np.all(np.isfinite(v)):
            raise PropagationError("non-finite value in state update")


def step_exploratory(coeffs: ThetaCoefficients, p: GaussianPolicy, x, dt: float, dW):
    """One Euler-Maruyama step of the relaxed-control SDE."""
    _check_finite(x, dW)
    mu = p.mean_slope * x + p.mean_intercept
    vol = np.sqrt((coeffs.C * x + coeffs.D * mu) ** 2 + coeffs.D ** 2 * p.variance)
    return x + (coeffs.A * x + coeffs.B * mu) * dt + vol * dW


def step_classical(coeffs: ThetaCoefficients, u, x, dt: float, dW):
    _check_finite(x, u, dW)
    return x + (coeffs.A * x + coeffs.B * u) * dt + (coeffs.C * x + coeffs.D * u) * dW


def running_cost_exploratory(coeffs: ThetaCoefficients, p: GaussianPolicy, alpha: float, x):
    """Gaussian-averaged running cost minus ``alpha`` times the policy entropy."""
    c = coeffs
    mu = p.mean_slope * x + p.mean_intercept
    f = 0.5 * c.L * x * x + c.S * x * mu + 0.5 * c.R * (mu * mu + p.variance) + c.M * x + c.N * mu
    return f - alpha * entropy(p)


def running_cost_classical(coeffs: ThetaCoefficients, u, x):
    c = coeffs
    return 0.5 * c.L * x * x + c.S * x * u + 0.5 * c.R * u * u + c.M * x + c.N * u


def discount_weights(rho: float, dt: float, n_steps: int) -> np.ndarray:
    """Exact integral of ``exp(-rho t)`` over each step."""
    t = dt * np.arange(n_steps)
    return np.exp(-rho * t) * (-math.expm1(-rho * dt) / rho)


@dataclass
class _Block:
    costs: np.ndarray
    n_diverged: int
    trace: np.ndarray | None = None
    cost_trace: np.ndarray | None = None


def _block_rng(seed: int, block: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(block,))))


def _run_block(step: Callable, cost: Callable, x0: float, rho: float, cfg: SimConfig,
               block: int, size: int, record: int = 0) -> _Block:
    rng = _block_rng(cfg.seed, block)
    n = cfg.n_steps
    w = discount_weights(rho, cfg.dt, n)
    sq = math.sqrt(cfg.dt)
    x = np.full(size, float(x0))
    total = np.zeros(size)
    alive = np.ones(size, dtype=bool)
    trace = np.empty((n + 1, record)) if record else None
    ctrace = np.empty((n, record)) if record else None
    for k in range(n):
        rc = cost(x)
        if record:
            trace[k] = x[:record]
            ctrace[k] = rc[:record]
        total += np.where(alive, w[k] * rc, 0.0)
        # full-width draw: a path's noise must not depend on how full its block is
        dW = sq * rng.standard_normal(BLOCK_SIZE)[:size]
        with np.errstate(over="ignore", invalid="ignore"):
            x = step(np.where(alive, x, 0.0), dW)
        alive &= np.abs(x) <= DIVERGENCE_BOUND
    if record:
        trace[n] = x[:record]
    return _Block(total, int(size - alive.sum()), trace, ctrace)


def _blocks(n_paths: int) -> list[tuple[int, int]]:
    out = []
    for b, start in enumerate(range(0, n_paths, BLOCK_SIZE)):
        out.append((b, min(BLOCK_SIZE, n_paths - start)))
    return out


def _estimate(step, cost, x0, rho, cfg: SimConfig) -> MCEstimate:
    jobs = _blocks(cfg.n_paths)

    def run(job):
        return _run_block(step, cost, x0, rho, cfg, *job)

    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(j) for j in jobs]
    costs = np.concatenate([r.costs for r in results])
    n_div = sum(r.n_diverged for r in results)
    mean = float(np.sum(costs) / costs.size)
    se = float(np.std(costs, ddof=1) / math.sqrt(costs.size)) if costs.size > 1 else 0.0
    return MCEstimate(mean, se, cfg.n_paths, cfg.dt, cfg.horizon, n_div)


def estimate_cost_exploratory(coeffs: ThetaCoefficients, p: GaussianPolicy, x0: float, rho: float,
                              alpha: float, cfg: SimConfig) -> MCEstimate:
    """Monte-Carlo discounted cost of the relaxed control over ``[0, T]``."""
    c = coeffs

    def step(x, dW):
        return step_exploratory(c, p, x, cfg.dt, dW)

    return _estimate(step, lambda x: running_cost_exploratory(c, p, alpha, x), x0, rho, cfg)


def estimate_cost_classical(coeffs: ThetaCoefficients, slope: float, intercept: float, x0: float,
                            rho: float, cfg: SimConfig) -> MCEstimate:
    """Monte-Carlo discounted cost of the feedback ``u = slope x + intercept``."""
    c = coeffs

    def step(x, dW):
        return step_classical(c, slope * x + intercept, x, cfg.dt, dW)

    return _estimate(step, lambda x: running_cost_classical(c, slope * x + intercept, x), x0, rho, cfg)


def em_moments(coeffs: ThetaCoefficients, slope: float, intercept: float, variance: float,
               x0: float, dt: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact first and second moments of the Euler-Maruyama chain.

    ``variance`` is the action variance; zero gives the classical chain.
    """
    c = coeffs
    b, bc = c.A + c.B * slope, c.B * intercept
    g, gc = c.C + c.D * slope, c.D * intercept
    m1 = np.empty(n_steps + 1)
    m2 = np.empty(n_steps + 1)
    m1[0], m2[0] = x0, x0 * x0
    q = 1.0 + b * dt
    for k in range(n_steps):
        a1, a2 = m1[k], m2[k]
        m1[k + 1] = q * a1 + bc * dt
        m2[k + 1] = (q * q * a2 + 2 * q * bc * dt * a1 + (bc * dt) ** 2
                     + dt * (g * g * a2 + 2 * g * gc * a1 + gc * gc + c.D ** 2 * variance))
    return m1, m2


def expected_cost_em(coeffs: ThetaCoefficients, p: GaussianPolicy | None, x0: float, rho: float,
                     alpha: float, cfg: SimConfig, classical: tuple[float, float] | None = None) -> float:
    """Exact expectation of what the Monte-Carlo estimators compute.

    Pass ``p`` for the exploratory cost, or ``classical=(slope, intercept)``.
    """
    c = coeffs
    if classical is None:
        s, m, var, ent = p.mean_slope, p.mean_intercept, p.variance, alpha * entropy(p)
    else:
        (s, m), var, ent = classical, 0.0, 0.0
    m1, m2 = em_moments(c, s, m, var, x0, cfg.dt, cfg.n_steps)
    m1, m2 = m1[:-1], m2[:-1]
    e_mu = s * m1 + m
    e_mu2 = s * s * m2 + 2 * s * m * m1 + m * m
    e_xmu = s * m2 + m * m1
    f = 0.5 * c.L * m2 + c.S * e_xmu + 0.5 * c.R * (e_mu2 + var) + c.M * m1 + c.N * e_mu - ent
    return float(np.sum(discount_weights(rho, cfg.dt, cfg.n_steps) * f))


@dataclass(frozen=True)
class DecayReport:
    fitted_rate: float
    analytic_rate: float
    continuous_rate: float
    bound_constant: float
    times: np.ndarray = field(repr=False)
    moments: np.ndarray = field(repr=False)

    @property
    def stable(self) -> bool:
        return self.fitted_rate < 0.0

    @property
    def relative_error(self) -> float:
        if self.analytic_rate == 0.0:
            return abs(self.fitted_rate)
        return abs(self.fitted_rate - self.analytic_rate) / abs(self.analytic_rate)


def check_moment_decay(coeffs: ThetaCoefficients, p: GaussianPolicy, x0: float, cfg: SimConfig,
                       p_order: int = 2, samples: int = 50) -> DecayReport:
    """Fit the exponential rate of ``E|X_t|^p`` on the second half of the horizon.

    Needs a homogeneous instance: zero intercept and no action noise in the
    diffusion (``D^2 var`` would otherwise keep the moment away from zero).
    ``bound_constant`` is the smallest K with ``E|X_t|^p <= K |x0|^p e^{rate t}``
    on the sampled times.
    """
    if p.mean_intercept != 0.0:
        raise DomainError("moment decay needs a homogeneous policy (zero intercept)")
    n = cfg.n_steps
    idx = np.unique(np.linspace(0, n, samples + 1).round().astype(int))
    times = idx * cfg.dt
    g = coeffs.C + coeffs.D * p.mean_slope
    b = coeffs.A + coeffs.B * p.mean_slope
    one_step = math.log((1 + b * cfg.dt) ** 2 + g * g * cfg.dt) / cfg.dt
    cont = 2 * b + g * g
    if x0 == 0.0:
        z = np.zeros(times.size)
        return DecayReport(-math.inf, one_step, cont, 0.0, times, z)

    sums = np.zeros(times.size)
    sq = math.sqrt(cfg.dt)
    for block, size in _blocks(cfg.n_paths):
        rng = _block_rng(cfg.seed, block)
        x = np.full(size, float(x0))
        j = 0
        for k in range(n + 1):
            if j < idx.size and idx[j] == k:
                sums[j] += np.sum(np.abs(x) ** p_order)
                j += 1
            if k == n:
                break
            dW = sq * rng.standard_normal(BLOCK_SIZE)[:size]
            x = step_exploratory(coeffs, p, x, cfg.dt, dW)
    mom = sums / cfg.n_paths
    half = times >= times[-1] / 2
    with np.errstate(divide="ignore"):
        logm = np.log(mom[half])
    if not np.all(np.isfinite(logm)):
        rate = -math.inf
    else:
        rate = float(np.polyfit(times[half], logm, 1)[0])
    ref = abs(x0) ** p_order
    with np.errstate(over="ignore"):
        k_const = float(np.max(mom * np.exp(-rate * times)) / ref) if math.isfinite(rate) else math.inf
    return DecayReport(rate, one_step, cont, k_const, times, mom)


def dump_trajectories(coeffs: ThetaCoefficients, p: GaussianPolicy, x0: float, rho: float, alpha: float,
                      cfg: SimConfig, path, n_dump: int = 10, every: int = 1) -> int:
    """Write the first ``n_dump`` paths of block 0 as CSV (t, path_id, x, running_cost).

    These are the same draws the estimator uses for those paths.
    """
    c = coeffs
    size = min(BLOCK_SIZE, cfg.n_paths)
    n_dump = min(n_dump, size)

    def step(x, dW):
        return step_exploratory(c, p, x, cfg.dt, dW)

    blk = _run_block(step, lambda x: running_cost_exploratory(c, p, alpha, x), x0, rho, cfg, 0, size, n_dump)
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "path_id", "x", "running_cost"])
        for k in range(0, cfg.n_steps, every):
            for j in range(n_dump):
                w.writerow([f"{k * cfg.dt:.17g}", j, f"{blk.trace[k, j]:.17g}", f"{blk.cost_trace[k, j]:.17g}"])
                rows += 1
    return rows
