"""Command-line front end: ``robust-lq {solve,simulate,verify,sweep}``.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config, with_override
from .model import DomainError, TwoPoint, UniformPoly, coefficients_at, theta_nodes, validate
from .policy import (VARIANCE_FLOOR, GaussianPolicy, entropy, gaussian_from_value, gibbs_on_grid)
from .riccati import (NoSolutionError, SolverError, compare_two_point, max_hjb_residual,
                      solve_theta, solve_two_point_closed, solve_two_point_numeric)
from .robust_verify import (alpha_limit_check, exploration_cost, minimax_report, policy_lattice,
                            refined_lambdas, refined_lattice, robust_value_two_point, robust_value_uniform,
                            solvability_equivalence_check)
from .sde_sim import (PropagationError, SimConfig, check_moment_decay, dump_trajectories,
                      estimate_cost_exploratory)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

SOLVE_COLUMNS = ("run_id", "record", "scenario", "lambda", "branch_id", "x", "k2", "k1", "k0",
                 "k2_2", "k1_2", "variance", "mean_slope", "mean_intercept", "value", "worst_case",
                 "residual", "status")
SIMULATE_COLUMNS = ("run_id", "scenario", "x0", "mean", "std_error", "n_paths", "dt", "horizon",
                    "n_diverged", "closed_form", "gap", "z_score", "valid")
VERIFY_COLUMNS = ("run_id", "check_name", "instance_id", "lhs", "rhs", "gap", "tolerance", "pass")
SWEEP_COLUMNS = ("run_id", "param", "value", "metric", "result", "status")

MOMENT_TOL = 0.15
MINIMAX_TOL = 1e-3


@dataclass(frozen=True)
class RunManifest:
    config_path: str
    command: str
    seed: int
    timestamp: str
    output_dir: str
    tool_version: str
    run_id: str


def fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v) + 0.0:.17g}"
    return str(v)


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([fmt(row.get(c)) for c in columns])


def make_run_id(cfg_text: str, command: str, seed: int, extra: dict) -> str:
    h = hashlib.sha256()
    h.update(cfg_text.encode())
    h.update(json.dumps({"command": command, "seed": seed, **extra}, sort_keys=True).encode())
    return h.hexdigest()[:16]


def _scenarios(cfg: RunConfig):
    fam = cfg.family
    if isinstance(fam, TwoPoint):
        if cfg.kind == "single":
            return [1]
        return [1, 2]
    return theta_nodes(fam)


def _gate(cfg: RunConfig, force: bool, verbose: bool) -> None:
    report = validate(cfg.problem)
    if verbose:
        print(report.summary())
    if not report.passed:
        failed = ", ".join(f"{it.name}={it.value:.6g}" for it in report.failed())
        if not force:
            raise ConfigError(f"standing assumptions fail ({failed}); rerun with --force to proceed")
        print(f"warning: assumptions fail ({failed}); continuing because of --force", file=sys.stderr)


# -- solve --------------------------------------------------------------------


def _theta_row(run_id, scenario, coeffs, cfg):
    p = cfg.problem
    v = solve_theta(coeffs, p.rho, p.alpha)
    pol = gaussian_from_value(coeffs, v, p.alpha)
    return {"record": "theta", "scenario": scenario, "k2": v.k2, "k1": v.k1, "k0": v.k0,
            "variance": v.variance, "mean_slope": pol.mean_slope, "mean_intercept": pol.mean_intercept,
            "residual": max_hjb_residual(v, coeffs, p.rho, p.alpha, p.x0_bound), "status": v.branch,
            "run_id": run_id}


def solve_rows(cfg: RunConfig, run_id: str) -> list[dict]:
    p = cfg.problem
    fam = cfg.family
    rows = [_theta_row(run_id, s, coefficients_at(fam, s), cfg) for s in _scenarios(cfg)]

    if isinstance(fam, TwoPoint) and cfg.kind == "two_point":
        t1, t2 = fam.theta1, fam.theta2
        base = {"run_id": run_id, "lambda": cfg.lam}
        branches = []
        try:
            branches = solve_two_point_numeric(t1, t2, cfg.lam, p.rho, p.alpha, p.x0_bound)
            for b in branches:
                rows.append({**base, "record": "two_point_numeric", "branch_id": b.branch_id,
                             "k2": b.k21, "k1": b.k11, "k0": b.k0, "k2_2": b.k22, "k1_2": b.k12,
                             "residual": b.residual, "status": "ok"})
        except NoSolutionError as exc:
            rows.append({**base, "record": "two_point_numeric", "status": f"no_solution: {exc}"})
        try:
            closed = solve_two_point_closed(t1, t2, cfg.lam, p.rho, p.alpha, p.x0_bound)
            status = "no_numeric_branch"
            if branches:
                cmp = compare_two_point(closed, branches)
                status = ("agree" if cmp["agree"] else
                          f"disagree: max |diff| {cmp['max_abs_diff']:.3g} vs branch {cmp['nearest_branch']}")
            rows.append({**base, "record": "two_point_closed", "k2": closed.k21, "k1": closed.k11,
                         "k0": closed.k0, "k2_2": closed.k22, "k1_2": closed.k12,
                         "residual": closed.residual, "status": status})
        except SolverError as exc:
            rows.append({**base, "record": "two_point_closed", "status": f"error: {exc}"})

    for x in cfg.solver.x:
        if isinstance(fam, TwoPoint):
            r = robust_value_two_point(fam.theta1, fam.theta2, p.rho, p.alpha, x)
            scen = 1 if r.lambda_star == 1 else 2
            rows.append({"run_id": run_id, "record": "robust", "x": x, "value": r.value,
                         "worst_case": r.lambda_star, "scenario": scen, "status": "lambda_star"})
        else:
            r = robust_value_uniform(fam, p.rho, p.alpha, x, cfg.solver.a_grid_size)
            rows.append({"run_id": run_id, "record": "robust", "x": x, "value": r.value,
                         "worst_case": r.a_star, "status": "a_star"})
    return rows


def _write_gibbs_conventions(cfg: RunConfig, out: Path) -> None:
    p = cfg.problem
    c = coefficients_at(cfg.family, _scenarios(cfg)[0])
    v = solve_theta(c, p.rho, p.alpha)
    x = cfg.solver.x[0]
    g = gibbs_on_grid(c, v, p.alpha, x)
    d = gibbs_on_grid(c, v, p.alpha, x, g.u_grid, convention="displayed")
    rows = [{"u": u, "minimize": a, "displayed": b} for u, a, b in zip(g.u_grid, g.weights, d.weights)]
    write_csv(out / "gibbs_conventions.csv", ("u", "minimize", "displayed"), rows)


def cmd_solve(cfg: RunConfig, args, run_id: str) -> int:
    _gate(cfg, args.force, args.verbose)
    rows = solve_rows(cfg, run_id)
    write_csv(args.out / "solution.csv", SOLVE_COLUMNS, rows)
    if args.verbose:
        _write_gibbs_conventions(cfg, args.out)
    for r in rows:
        if r["record"] == "theta":
            print(f"theta {r['scenario']}: k2={r['k2']:.10g} k1={r['k1']:.10g} k0={r['k0']:.10g} "
                  f"variance={r['variance']:.10g} residual={r['residual']:.3g} ({r['status']})")
        elif r["record"] == "robust":
            print(f"robust x={r['x']:g}: V={r['value']:.10g} worst case {r['status']}={r['worst_case']}")
        else:
            print(f"{r['record']}: {r['status']}")
    return EXIT_OK


# -- simulate -----------------------------------------------------------------


def _sim_config(cfg: RunConfig, args) -> SimConfig:
    s = cfg.solver
    dt = args.dt if args.dt is not None else s.dt
    paths = args.paths if args.paths is not None else s.paths
    horizon = args.horizon if args.horizon is not None else s.horizon
    workers = args.workers if args.workers is not None else s.workers
    seed = args.seed if args.seed is not None else s.seed
    try:
        if horizon is None:
            return SimConfig.for_discount(cfg.problem.rho, dt, paths, seed, workers=workers)
        return SimConfig(dt, horizon, paths, seed, workers)
    except DomainError as exc:
        raise ConfigError(str(exc), "horizon") from exc


def cmd_simulate(cfg: RunConfig, args, run_id: str) -> int:
    _gate(cfg, args.force, args.verbose)
    p = cfg.problem
    sim = _sim_config(cfg, args)
    rows = []
    flagged = False
    for s in _scenarios(cfg):
        c = coefficients_at(cfg.family, s)
        v = solve_theta(c, p.rho, p.alpha)
        pol = gaussian_from_value(c, v, p.alpha)
        for x0 in cfg.solver.x:
            est = estimate_cost_exploratory(c, pol, x0, p.rho, p.alpha, sim)
            target = float(v(x0))
            gap = est.mean - target
            z = gap / est.std_error if est.std_error > 0 else (0.0 if gap == 0 else math.inf)
            flagged |= not est.valid
            rows.append({"run_id": run_id, "scenario": s, "x0": x0, "mean": est.mean,
                         "std_error": est.std_error, "n_paths": est.n_paths, "dt": est.dt,
                         "horizon": est.horizon, "n_diverged": est.n_diverged, "closed_form": target,
                         "gap": gap, "z_score": z, "valid": est.valid})
            print(f"theta {s} x0={x0:g}: MC {est.mean:.8g} +/- {est.std_error:.2g} "
                  f"vs closed form {target:.8g} (z={z:.2f})")
        if args.dump_paths and s == _scenarios(cfg)[0]:
            dump_trajectories(c, pol, cfg.solver.x[0], p.rho, p.alpha, sim, args.dump_paths)
    write_csv(args.out / "estimates.csv", SIMULATE_COLUMNS, rows)
    if flagged and args.strict:
        print("divergence threshold exceeded", file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


# -- verify -------------------------------------------------------------------


def _row(run_id, name, inst, lhs, rhs, tol, passed, gap=None):
    if gap is None:
        gap = lhs - rhs if lhs is not None and rhs is not None else None
    return {"run_id": run_id, "check_name": name, "instance_id": inst, "lhs": lhs, "rhs": rhs,
            "gap": gap, "tolerance": tol, "pass": passed}


def verify_rows(cfg: RunConfig, run_id: str, seed: int) -> list[dict]:
    p = cfg.problem
    fam = cfg.family
    s = cfg.solver
    rows = []
    add = rows.append

    for sc in _scenarios(cfg):
        c = coefficients_at(fam, sc)
        v = solve_theta(c, p.rho, p.alpha)
        res = max_hjb_residual(v, c, p.rho, p.alpha, p.x0_bound)
        add(_row(run_id, "hjb_residual", f"theta={sc}", res, 0.0, 1e-8, res <= 1e-8))

        g = gaussian_from_value(c, v, p.alpha)
        x = s.x[0]
        grid = gibbs_on_grid(c, v, p.alpha, x)
        dm = abs(grid.mean() - float(g.mean(x)))
        dv = abs(grid.variance() / g.variance - 1.0)
        de = abs(entropy(grid) - entropy(g))
        add(_row(run_id, "gibbs_mean", f"theta={sc},x={x:g}", grid.mean(), float(g.mean(x)), 1e-6, dm < 1e-6))
        add(_row(run_id, "gibbs_variance_rel", f"theta={sc},x={x:g}", grid.variance(), g.variance, 1e-5,
                 dv < 1e-5, gap=dv))
        add(_row(run_id, "gibbs_entropy", f"theta={sc},x={x:g}", entropy(grid), entropy(g), 1e-5, de < 1e-5))

        alphas = [p.alpha, p.alpha / 10, p.alpha / 100]
        lim = alpha_limit_check(c, p.rho, alphas)
        drift = max(lim.slope_drift, lim.intercept_drift)
        add(_row(run_id, "alpha_limit_mean_drift", f"theta={sc}", drift, 0.0, 1e-12, drift <= 1e-12))
        add(_row(run_id, "alpha_limit_variance_ratio", f"theta={sc}", lim.variance_ratio_drift, 0.0, 1e-12,
                 lim.variance_ratio_drift <= 1e-12))
        add(_row(run_id, "alpha_limit_k0_offset", f"theta={sc}", lim.displayed_offset_error, 0.0, 1e-12,
                 lim.displayed_offset_error <= 1e-12))

        mc_cfg = SimConfig.for_discount(p.rho, s.dt, s.paths, seed, workers=s.workers)
        eq = solvability_equivalence_check(c, p.rho, p.alpha, p.x0_bound, mc_cfg)
        dmean = max(eq.slope_diff, eq.intercept_diff)
        add(_row(run_id, "equivalence_mean", f"theta={sc}", dmean, 0.0, 1e-14, eq.means_match))
        add(_row(run_id, "equivalence_classical_mc", f"theta={sc},x={p.x0_bound:g}", eq.mc.mean,
                 eq.classical_value, 3 * eq.mc.std_error, eq.mc_match))

        decay_cfg = SimConfig(s.dt, round(4.0 / s.dt) * s.dt, s.paths, seed, s.workers)
        hom = GaussianPolicy(g.mean_slope, 0.0, VARIANCE_FLOOR)
        rep = check_moment_decay(c, hom, p.x0_bound, decay_cfg)
        ok = rep.stable and rep.relative_error <= MOMENT_TOL
        add(_row(run_id, "moment_decay_rate", f"theta={sc}", rep.fitted_rate, rep.analytic_rate,
                 MOMENT_TOL, ok))

    if isinstance(fam, TwoPoint) and cfg.kind == "two_point":
        t1, t2 = fam.theta1, fam.theta2
        for lam, act in ((1.0, t1), (0.0, t2)):
            ref = solve_theta(act, p.rho, p.alpha)
            inst = f"lambda={lam:g}"
            try:
                best = solve_two_point_numeric(t1, t2, lam, p.rho, p.alpha, p.x0_bound)[0]
                got = (best.k21, best.k11, best.k0) if lam == 1.0 else (best.k22, best.k12, best.k0)
                diff = max(abs(a - b) for a, b in zip(got, ref.coefficients))
                add(_row(run_id, "two_point_endpoint", inst, diff, 0.0, 1e-8, diff <= 1e-8))
                try:
                    closed = solve_two_point_closed(t1, t2, lam, p.rho, p.alpha, p.x0_bound)
                    cmp = compare_two_point(closed, [best])
                    add(_row(run_id, "closed_form_vs_numeric", inst, cmp["max_abs_diff"], 0.0, None, "info"))
                except SolverError as exc:
                    add(_row(run_id, "closed_form_vs_numeric", f"{inst}: {exc}", None, None, None, "info"))
            except NoSolutionError:
                add(_row(run_id, "two_point_endpoint", inst, math.inf, 0.0, 1e-8, False))

        for x in s.x:
            lat = policy_lattice(t1, t2, p.rho, p.alpha, x)
            r1 = minimax_report(t1, t2, p.rho, p.alpha, x, lat)
            r2 = minimax_report(t1, t2, p.rho, p.alpha, x, refined_lattice(r1, lat, 41),
                                refined_lambdas(r1))
            inst = f"x={x:g}"
            weak = min(r1.gap, r2.gap)
            add(_row(run_id, "minimax_weak_duality", inst, weak, -1e-12, 0.0, weak >= -1e-12))
            add(_row(run_id, "minimax_gap_refined", inst, r2.gap, 0.0, MINIMAX_TOL, r2.gap < MINIMAX_TOL))
            ends = r1.endpoint_attained and r2.endpoint_attained
            add(_row(run_id, "lambda_endpoint", inst, float(ends), 1.0, 0.0, ends))

    costs = []
    for x in s.x:
        ec = exploration_cost(fam, p.rho, p.alpha, x)
        costs.append(ec.value)
        add(_row(run_id, "exploration_cost", f"x={x:g}", ec.value, ec.target, 1e-10, ec.identity_holds))
    spread = max(costs) - min(costs)
    add(_row(run_id, "exploration_cost_x_independence", "all_x", spread, 0.0, 1e-12, spread <= 1e-12))
    return rows


def cmd_verify(cfg: RunConfig, args, run_id: str) -> int:
    _gate(cfg, args.force, args.verbose)
    seed = args.seed if args.seed is not None else cfg.solver.seed
    rows = verify_rows(cfg, run_id, seed)
    write_csv(args.out / "verification.csv", VERIFY_COLUMNS, rows)
    failed = [r for r in rows if r["pass"] is False]
    for r in rows:
        tag = "INFO" if r["pass"] == "info" else ("PASS" if r["pass"] else "FAIL")
        if tag != "PASS" or args.verbose:
            print(f"{tag} {r['check_name']} [{r['instance_id']}] lhs={fmt(r['lhs'])} rhs={fmt(r['rhs'])} "
                  f"gap={fmt(r['gap'])}")
    print(f"{len(rows) - len(failed)}/{len(rows)} checks without failure")
    return EXIT_CHECK if failed else EXIT_OK


# -- sweep --------------------------------------------------------------------


def sweep_point(cfg: RunConfig) -> list[tuple[str, float]]:
    p = cfg.problem
    fam = cfg.family
    x = cfg.solver.x[0]
    out = []
    for s in _scenarios(cfg):
        c = coefficients_at(fam, s)
        v = solve_theta(c, p.rho, p.alpha)
        out += [(f"k2_{s}", v.k2), (f"k1_{s}", v.k1), (f"k0_{s}", v.k0), (f"variance_{s}", v.variance)]
    if isinstance(fam, TwoPoint):
        r = robust_value_two_point(fam.theta1, fam.theta2, p.rho, p.alpha, x)
        mixed = cfg.lam * r.per_theta[1](x) + (1 - cfg.lam) * r.per_theta[2](x)
        out += [("value", float(mixed)), ("robust_value", r.value), ("lambda_star", float(r.lambda_star))]
    else:
        r = robust_value_uniform(fam, p.rho, p.alpha, x, cfg.solver.a_grid_size)
        out += [("robust_value", r.value), ("a_star", r.a_star)]
    out.append(("exploration_cost", exploration_cost(fam, p.rho, p.alpha, x).value))
    return out


def cmd_sweep(cfg: RunConfig, args, run_id: str) -> int:
    if not args.param or not args.values:
        raise ConfigError("sweep needs --param and --values", "param")
    rows = []
    ok = 0
    for val in args.values:
        base = {"run_id": run_id, "param": args.param, "value": val}
        try:
            point = with_override(cfg, args.param, val)
            _gate(point, args.force, args.verbose)
            metrics = sweep_point(point)
        except (ConfigError, SolverError, DomainError, ValueError) as exc:
            rows.append({**base, "metric": "", "result": None, "status": f"error: {exc}"})
            continue
        ok += 1
        rows += [{**base, "metric": m, "result": r, "status": "ok"} for m, r in metrics]
    write_csv(args.out / "sweep.csv", SWEEP_COLUMNS, rows)
    print(f"sweep over {args.param}: {ok}/{len(args.values)} points solved")
    return EXIT_OK if ok else EXIT_NUMERIC


# -- entry point --------------------------------------------------------------

COMMANDS = {"solve": cmd_solve, "simulate": cmd_simulate, "verify": cmd_verify, "sweep": cmd_sweep}


def _global_flags(parser: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--config", type=Path, default=d(None), help="problem file (TOML)")
    parser.add_argument("--out", type=Path, default=d(Path(".")), help="output directory")
    parser.add_argument("--seed", type=int, default=d(None), help="root seed (unsigned 64-bit)")
    parser.add_argument("--force", action="store_true", default=d(False),
                        help="proceed when the standing assumptions fail")
    parser.add_argument("--strict", action="store_true", default=d(False),
                        help="nonzero exit on flagged estimates")
    parser.add_argument("--verbose", action="store_true", default=d(False))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robust-lq", description=__doc__.splitlines()[0])
    _global_flags(parser, suppress=False)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        _global_flags(sp, suppress=True)
        if name == "simulate":
            sp.add_argument("--paths", type=int)
            sp.add_argument("--dt", type=float)
            sp.add_argument("--horizon", type=float)
            sp.add_argument("--workers", type=int)
            sp.add_argument("--dump-paths", type=Path)
        if name == "sweep":
            sp.add_argument("--param", required=True)
            sp.add_argument("--values", type=float, nargs="+", required=True)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.config is None:
        print("error: --config is required", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config)
        if args.seed is not None and not 0 <= args.seed < 2 ** 64:
            raise ConfigError("must be an unsigned 64-bit integer", "seed")
        args.out.mkdir(parents=True, exist_ok=True)
        text = args.config.read_text()
        extra = {k: getattr(args, k, None) for k in ("paths", "dt", "horizon", "param", "values")}
        extra["dump_paths"] = str(getattr(args, "dump_paths", None) or "")
        seed = args.seed if args.seed is not None else cfg.solver.seed
        run_id = make_run_id(text, args.command, seed, extra)
        manifest = RunManifest(str(args.config), args.command, seed,
                               datetime.now(timezone.utc).isoformat(), str(args.out), __version__, run_id)
        (args.out / f"{args.command}_manifest.json").write_text(json.dumps(asdict(manifest), indent=2) + "\n")
        return COMMANDS[args.command](cfg, args, run_id)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverError, PropagationError, DomainError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
