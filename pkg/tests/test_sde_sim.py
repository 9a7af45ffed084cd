import csv
import math

import numpy as np
import pytest

from robust_lq.model import DomainError, ThetaCoefficients
from robust_lq.policy import GaussianPolicy, entropy, gaussian_from_value
from robust_lq.riccati import solve_theta
from robust_lq.sde_sim import (BLOCK_SIZE, MCEstimate, PropagationError, SimConfig, check_moment_decay,
                               discount_weights, dump_trajectories, em_moments, estimate_cost_classical,
                               estimate_cost_exploratory, expected_cost_em, step_classical,
                               step_exploratory)

from conftest import DERIVED, DERIVED_RHO, random_instance

TINY = 1e-300


def test_zero_drift_zero_noise_step():
    t = ThetaCoefficients(C=0.4, D=0.7, L=1, R=1)
    p = GaussianPolicy(0.3, 0.1, 0.2)
    assert step_exploratory(t, p, 1.3, 0.01, 0.0) == 1.3


def test_degenerate_policy_step():
    t = ThetaCoefficients(A=0.3, C=1.0, D=0.0)
    p = GaussianPolicy(0.0, 0.0, TINY)
    x, dt, dW = 0.8, 0.01, 0.05
    assert step_exploratory(t, p, x, dt, dW) == pytest.approx(x + 0.3 * x * dt + x * dW, abs=1e-16)


def test_derived_one_step_by_hand():
    v = solve_theta(DERIVED, DERIVED_RHO, 0.5)
    p = gaussian_from_value(DERIVED, v, 0.5)
    mu = -v.k2 / (1 + v.k2)
    var = 0.5 / (1 + v.k2)
    expected = 1.0 + mu * 0.01 + math.sqrt(mu * mu + var) * 0.1
    assert step_exploratory(DERIVED, p, 1.0, 0.01, 0.1) == pytest.approx(expected, abs=1e-15)


def test_classical_steps():
    t = ThetaCoefficients(A=-0.5)
    assert step_classical(t, 0.0, 2.0, 0.1, 0.3) == pytest.approx(2.0 * (1 - 0.05))
    assert step_classical(ThetaCoefficients(), 0.0, 1.7, 0.1, 0.3) == 1.7


def test_non_finite_state_raises():
    with pytest.raises(PropagationError):
        step_classical(DERIVED, 0.0, math.nan, 0.01, 0.0)
    with pytest.raises(PropagationError):
        step_exploratory(DERIVED, GaussianPolicy(0, 0, 1), 1.0, 0.01, math.inf)


def test_one_step_second_moment_gap():
    # Exploratory minus classical one-step second moment is D^2 var dt.
    t = ThetaCoefficients(A=0.2, B=0.7, C=0.3, D=1.5, L=1, R=1)
    p = GaussianPolicy(-0.4, 0.1, 0.6)
    dt, x = 0.05, 0.9
    dW = math.sqrt(dt) * np.random.default_rng(5).standard_normal(10 ** 6)
    xe = step_exploratory(t, p, x, dt, dW)
    xc = step_classical(t, float(p.mean(x)), x, dt, dW)
    gap = np.mean(xe ** 2) - np.mean(xc ** 2)
    # Same draws on both sides: the gap's noise is the noise of a
    # (vol_e^2 - vol_c^2) dW^2 term, whose relative spread is sqrt(2/n).
    target = t.D ** 2 * p.variance * dt
    assert gap == pytest.approx(target, rel=5 * math.sqrt(2 / 1e6) + 0.02)


def test_sim_config_validation():
    with pytest.raises(DomainError):
        SimConfig(0.01, 1.005, 10)
    with pytest.raises(DomainError):
        SimConfig(0.0, 1.0, 10)
    with pytest.raises(DomainError):
        SimConfig(0.01, 1.0, 0)
    cfg = SimConfig.for_discount(2.0, 1e-3, 10)
    assert cfg.n_steps == 4606
    assert cfg.truncation_factor(2.0) <= 1e-4


def test_discount_weights_exact():
    w = discount_weights(2.0, 0.1, 50)
    assert w.sum() == pytest.approx((1 - math.exp(-2.0 * 5.0)) / 2.0, rel=1e-14)


def test_zero_cost_deterministic_estimate():
    t = ThetaCoefficients(A=-0.2, B=1.0, C=0.1, D=1.0, R=1.0)
    alpha, rho = 0.7, 1.5
    v = solve_theta(t, rho, alpha)
    p = gaussian_from_value(t, v, alpha)
    # Zero state cost and zero mean: only the R var / 2 - alpha H term remains.
    cfg = SimConfig(0.01, 2.0, 100)
    est = estimate_cost_exploratory(t, p, 0.5, rho, alpha, cfg)
    flow = 0.5 * t.R * p.variance - alpha * entropy(p)
    assert est.mean == pytest.approx(flow * (1 - math.exp(-rho * 2.0)) / rho, rel=1e-12)
    assert est.std_error < 1e-14


def test_pure_entropy_estimate():
    t = ThetaCoefficients()
    p = GaussianPolicy(0.0, 0.0, 2.0)
    cfg = SimConfig(0.1, 3.0, 8)
    est = estimate_cost_exploratory(t, p, 1.0, 1.0, 0.5, cfg)
    assert est.mean == pytest.approx(-0.5 * entropy(p) * (1 - math.exp(-3.0)), rel=1e-13)
    assert est.std_error == 0.0


def test_constant_term_at_origin():
    v = solve_theta(DERIVED, DERIVED_RHO, 0.5)
    p = gaussian_from_value(DERIVED, v, 0.5)
    cfg = SimConfig.for_discount(DERIVED_RHO, 2e-3, 20000, seed=3)
    est = estimate_cost_exploratory(DERIVED, p, 0.0, DERIVED_RHO, 0.5, cfg)
    assert est.valid
    assert est.within(v.k0)


@pytest.mark.parametrize("seed", range(4))
def test_mc_matches_exact_em_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    t, rho, alpha = random_instance(rng)
    v = solve_theta(t, rho, alpha)
    p = gaussian_from_value(t, v, alpha)
    x0 = float(rng.uniform(-1, 1))
    cfg = SimConfig.for_discount(rho, 1e-2, 8000, seed=seed)
    est = estimate_cost_exploratory(t, p, x0, rho, alpha, cfg)
    assert est.within(expected_cost_em(t, p, x0, rho, alpha, cfg), k=4)
    cl = estimate_cost_classical(t, p.mean_slope, p.mean_intercept, x0, rho, cfg)
    oracle = expected_cost_em(t, None, x0, rho, alpha, cfg, classical=(p.mean_slope, p.mean_intercept))
    assert cl.within(oracle, k=4)


def test_em_oracle_converges_to_value():
    v = solve_theta(DERIVED, DERIVED_RHO, 0.5)
    p = gaussian_from_value(DERIVED, v, 0.5)
    errs = []
    for dt in (4e-3, 2e-3, 1e-3):
        cfg = SimConfig.for_discount(DERIVED_RHO, dt, 1, tail=1e-10)
        errs.append(abs(expected_cost_em(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg) - v(1.0)))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 1e-3


def test_em_moments_classical_closed_form():
    t = ThetaCoefficients(A=-1.0)
    m1, m2 = em_moments(t, 0.0, 0.0, 0.0, 2.0, 0.1, 10)
    assert m1[-1] == pytest.approx(2.0 * 0.9 ** 10)
    assert m2[-1] == pytest.approx(4.0 * 0.81 ** 10)


def test_divergence_counted():
    t = ThetaCoefficients(A=40.0, C=3.0, L=1, R=1)
    p = GaussianPolicy(0.0, 0.0, TINY)
    cfg = SimConfig(0.05, 20.0, 200)
    est = estimate_cost_exploratory(t, p, 1.0, 0.5, 0.1, cfg)
    assert est.n_diverged > 0
    assert not est.valid
    assert math.isfinite(est.mean)


def test_mc_estimate_flags():
    assert MCEstimate(1.0, 0.1, 1000, 0.01, 1.0, n_diverged=1).valid
    assert not MCEstimate(1.0, 0.1, 1000, 0.01, 1.0, n_diverged=2).valid
    assert MCEstimate(1.0, 0.1, 10, 0.01, 1.0).within(1.29)
    assert not MCEstimate(1.0, 0.1, 10, 0.01, 1.0).within(1.31)


def test_seed_reproducible_bitwise():
    v = solve_theta(DERIVED, DERIVED_RHO, 0.5)
    p = gaussian_from_value(DERIVED, v, 0.5)
    cfg = SimConfig(0.01, 1.0, BLOCK_SIZE + 300, seed=11)
    a = estimate_cost_exploratory(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg)
    b = estimate_cost_exploratory(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg)
    c = estimate_cost_exploratory(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg.replace(workers=3))
    assert a == b == c
    d = estimate_cost_exploratory(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg.replace(seed=12))
    assert d.mean != a.mean


def test_prefix_paths_are_stable(tmp_path):
    # A path's draws depend on (seed, path index) only, not on n_paths.
    v = solve_theta(DERIVED, DERIVED_RHO, 0.5)
    p = gaussian_from_value(DERIVED, v, 0.5)
    small = SimConfig(0.01, 0.5, 100, seed=4)
    for n, name in ((100, "a.csv"), (2 * BLOCK_SIZE, "b.csv")):
        dump_trajectories(DERIVED, p, 1.0, DERIVED_RHO, 0.5, small.replace(n_paths=n), tmp_path / name, 5)
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_std_error_scaling():
    v = solve_theta(DERIVED, DERIVED_RHO, 0.5)
    p = gaussian_from_value(DERIVED, v, 0.5)
    cfg = SimConfig(0.02, 2.0, 4000, seed=1)
    a = estimate_cost_exploratory(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg)
    b = estimate_cost_exploratory(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg.replace(n_paths=8000))
    assert a.std_error / b.std_error == pytest.approx(math.sqrt(2), rel=0.2)


def test_decay_deterministic_ode():
    t = ThetaCoefficients(A=-1.0)
    p = GaussianPolicy(0.0, 0.0, TINY)
    rep = check_moment_decay(t, p, 1.0, SimConfig(1e-3, 3.0, 16))
    assert rep.stable
    assert rep.fitted_rate == pytest.approx(-2.0, rel=2e-3)
    assert rep.fitted_rate == pytest.approx(rep.analytic_rate, rel=1e-9)


def test_decay_unstable():
    t = ThetaCoefficients(A=0.3, C=0.5)
    p = GaussianPolicy(0.0, 0.0, TINY)
    rep = check_moment_decay(t, p, 1.0, SimConfig(1e-2, 4.0, 4000, seed=2))
    assert rep.fitted_rate > 0
    assert not rep.stable
    assert rep.continuous_rate == pytest.approx(0.85)


def test_decay_trivial_solution():
    rep = check_moment_decay(ThetaCoefficients(A=-1.0), GaussianPolicy(0, 0, TINY), 0.0,
                             SimConfig(1e-2, 1.0, 10))
    assert np.all(rep.moments == 0)


def test_decay_needs_homogeneous_policy():
    with pytest.raises(DomainError):
        check_moment_decay(DERIVED, GaussianPolicy(0.0, 0.1, 1.0), 1.0, SimConfig(1e-2, 1.0, 10))


def test_dump_trajectories(tmp_path):
    v = solve_theta(DERIVED, DERIVED_RHO, 0.5)
    p = gaussian_from_value(DERIVED, v, 0.5)
    cfg = SimConfig(0.1, 1.0, 50, seed=9)
    out = tmp_path / "paths.csv"
    rows = dump_trajectories(DERIVED, p, 1.0, DERIVED_RHO, 0.5, cfg, out, n_dump=3)
    with open(out) as fh:
        data = list(csv.reader(fh))
    assert data[0] == ["t", "path_id", "x", "running_cost"]
    assert rows == len(data) - 1 == 30
    assert all(float(r[2]) == 1.0 for r in data[1:4])
