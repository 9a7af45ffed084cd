"""TOML problem files.

Layout::

    [dynamics]          A, B, C, D
    [cost]              L, S, R, M, N, rho, alpha
    [robust]            family = "single" | "two_point" | "uniform"; lambda; a1, a2
    [solver]            x0_bound, x, dt, horizon, paths, seed, workers

A coefficient is a number for ``single``, a pair ``[theta1, theta2]`` for
``two_point`` and ascending polynomial coefficients for ``uniform``.
Missing coefficients default to zero.
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .model import (FIELDS, CoefficientError, CoefficientFamily, Problem, ThetaCoefficients, TwoPoint,
                    UniformPoly)

FAMILIES = ("single", "two_point", "uniform")
SECTIONS = {
    "dynamics": ("A", "B", "C", "D"),
    "cost": ("L", "S", "R", "M", "N", "rho", "alpha"),
    "robust": ("family", "lambda", "a1", "a2"),
    "solver": ("x0_bound", "x", "dt", "horizon", "paths", "seed", "workers", "a_grid_size"),
}


class ConfigError(ValueError):
    """Malformed or invalid configuration; ``field`` names the key when known."""

    def __init__(self, message: str, field_name: str | None = None):
        super().__init__(f"{field_name}: {message}" if field_name else message)
        self.field = field_name


@dataclass(frozen=True)
class SolverSettings:
    x: tuple[float, ...] = (0.0, 1.0)
    dt: float = 1e-2
    horizon: float | None = None
    paths: int = 2000
    seed: int = 0
    workers: int = 1
    a_grid_size: int = 101


@dataclass(frozen=True)
class RunConfig:
    problem: Problem
    kind: str
    lam: float = 1.0
    solver: SolverSettings = field(default_factory=SolverSettings)
    source: str = ""

    @property
    def family(self) -> CoefficientFamily:
        return self.problem.family


def _number(value, name: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", name)
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"must be finite, got {value}", name)
    return value


def _numbers(value, name: str) -> list[float]:
    if isinstance(value, list):
        return [_number(v, name) for v in value]
    return [_number(value, name)]


def _coefficients(doc: dict, kind: str) -> CoefficientFamily:
    raw = {}
    for sec in ("dynamics", "cost"):
        for key in SECTIONS[sec]:
            if key in FIELDS and key in doc.get(sec, {}):
                raw[key] = _numbers(doc[sec][key], key)
    try:
        if kind == "single":
            vals = {}
            for k, v in raw.items():
                if len(v) != 1:
                    raise ConfigError("single family takes a scalar", k)
                vals[k] = v[0]
            theta = ThetaCoefficients(**vals).require_positive_weights()
            return TwoPoint.single(theta)
        if kind == "two_point":
            pairs = {}
            for k, v in raw.items():
                if len(v) == 1:
                    v = v * 2
                if len(v) != 2:
                    raise ConfigError("two_point family takes a scalar or a pair", k)
                pairs[k] = v
            t1 = ThetaCoefficients(**{k: v[0] for k, v in pairs.items()})
            t2 = ThetaCoefficients(**{k: v[1] for k, v in pairs.items()})
            for t in (t1, t2):
                t.require_positive_weights()
            return TwoPoint(t1, t2)
        robust = doc.get("robust", {})
        for key in ("a1", "a2"):
            if key not in robust:
                raise ConfigError("required for the uniform family", key)
        return UniformPoly({k: tuple(v) for k, v in raw.items()},
                           _number(robust["a1"], "a1"), _number(robust["a2"], "a2"))
    except CoefficientError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field) from exc


def parse_config(text: str, source: str = "<string>") -> RunConfig:
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    for sec, body in doc.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", sec)
        if not isinstance(body, dict):
            raise ConfigError("must be a table", sec)
        for key in body:
            if key not in SECTIONS[sec]:
                raise ConfigError(f"unknown key in [{sec}]", key)

    robust = doc.get("robust", {})
    kind = robust.get("family", "single")
    if kind not in FAMILIES:
        raise ConfigError(f"must be one of {FAMILIES}, got {kind!r}", "family")
    family = _coefficients(doc, kind)

    cost = doc.get("cost", {})
    for key in ("rho", "alpha"):
        if key not in cost:
            raise ConfigError("required in [cost]", key)
    rho, alpha = _number(cost["rho"], "rho"), _number(cost["alpha"], "alpha")
    sol = doc.get("solver", {})
    bound = _number(sol.get("x0_bound", 1.0), "x0_bound")
    try:
        problem = Problem(family, rho, alpha, bound)
    except CoefficientError as exc:
        raise ConfigError(str(exc).split(": ", 1)[-1], exc.field) from exc

    lam = _number(robust.get("lambda", 1.0), "lambda")
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"must lie in [0, 1], got {lam}", "lambda")

    settings = SolverSettings()
    updates = {}
    if "x" in sol:
        updates["x"] = tuple(_numbers(sol["x"], "x"))
    for key in ("dt", "horizon"):
        if key in sol:
            val = _number(sol[key], key)
            if val <= 0:
                raise ConfigError("must be > 0", key)
            updates[key] = val
    for key in ("paths", "seed", "workers", "a_grid_size"):
        if key in sol:
            val = sol[key]
            if isinstance(val, bool) or not isinstance(val, int) or val < (0 if key == "seed" else 1):
                raise ConfigError(f"expected a {'nonnegative' if key == 'seed' else 'positive'} integer, "
                                  f"got {val!r}", key)
            updates[key] = val
    return RunConfig(problem, kind, lam, replace(settings, **updates), source)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc.strerror}") from exc
    return parse_config(text, str(path))


def with_override(cfg: RunConfig, param: str, value: float) -> RunConfig:
    """Copy of ``cfg`` with one parameter changed (sweeps)."""
    p = cfg.problem
    if param == "alpha":
        return replace(cfg, problem=replace(p, alpha=value))
    if param == "rho":
        return replace(cfg, problem=replace(p, rho=value))
    if param == "lambda":
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"must lie in [0, 1], got {value}", "lambda")
        return replace(cfg, lam=value)
    if param in FIELDS:
        fam = p.family
        if isinstance(fam, TwoPoint):
            fam = TwoPoint(fam.theta1.replace(**{param: value}), fam.theta2.replace(**{param: value}))
        else:
            polys = dict(fam.coeff_polys)
            polys[param] = (value,)
            fam = UniformPoly(polys, fam.a1, fam.a2)
        return replace(cfg, problem=replace(p, family=fam))
    raise ConfigError(f"cannot sweep over {param!r}", "param")
