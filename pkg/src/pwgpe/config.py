"""Run configuration: defaults, file loading, validation and builders.

A run is described by one JSON file with the sections below; command-line
flags override file values, which override the defaults.  Validation is
strict and complete before any computation starts, and every diagnostic is
anchored to the JSON path of the offending entry.
"""

from __future__ import annotations

import copy
import json
import os

from .errors import ConfigError
from .linalg import EigSolveConfig
from .model import Nonlinearity, Problem, make_potential
from .postprocess import SCHEMES, LinSolveConfig
from .solve import SolverConfig
from .study import DEFAULT_STUDY_POTENTIAL, StudyConfig

CACHE_ENV_VAR = "PWGPE_CACHE_DIR"

DEFAULTS = {
    "problem": {
        "d": 1,
        "a0": 1.0,
        "mu": 1.0,
        "potential": copy.deepcopy(DEFAULT_STUDY_POTENTIAL),
        "nonlinearity": {"p": 2.0},
    },
    "basis": {"M": 16, "fine_factor": 4},
    "solver": {
        "method": "scf",
        "tol_residual": 1e-10,
        "max_outer": 400,
        "damping": 0.5,
        "flow_step": 1.0,
        "inner_tol": 1e-11,
        "inner_max_iter": 4000,
        "dense_threshold": 600,
        "seed": 0,
    },
    "linsolve": {"tol": 1e-10, "max_iter": 20000, "min_fine_ratio": 2.0},
    "eig": {"tol": 1e-10, "max_iter": 4000, "dense_threshold": 600, "seed": 0},
    "scheme": "newton",
    "estimator": {"certificate": True},
    "study": {
        "M_list": [8, 12, 16, 24, 32],
        "M_ref": 256,
        "fine_factor": 4,
        "bounds_fine_factor": 8,
        "schemes": ["newton", "tg1", "pert"],
        "certificate": True,
        "certificate_floor_M": 2,
        "ref_tol": 1e-12,
    },
    "oracle": {"M": 16},
    "output_dir": "out",
    "cache_dir": None,
    "seed": None,
}

_SCALARS = (int, float, str, bool, type(None))


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        here = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"{here}: unknown configuration key")
        if isinstance(base[key], dict) and key != "potential":
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a section, got {type(value).__name__}")
            out[key] = _merge(base[key], value, here)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path: str | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then the file, then explicit overrides; fully validated."""
    cfg = copy.deepcopy(DEFAULTS)
    if path is not None:
        try:
            with open(path) as f:
                data = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be an object")
        cfg = _merge(cfg, data)
    for key, value in (overrides or {}).items():
        section = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            section = section[part]
        section[parts[-1]] = value
    if cfg.get("seed") is not None:
        cfg["solver"]["seed"] = int(cfg["seed"])
        cfg["eig"]["seed"] = int(cfg["seed"])
    validate_config(cfg)
    return cfg


def _require(cond, where, message):
    if not cond:
        raise ConfigError(f"{where}: {message}")


def validate_config(cfg: dict) -> None:
    p = cfg["problem"]
    _require(p["d"] in (1, 2, 3), "problem.d", f"dimension must be 1, 2 or 3, got {p['d']}")
    _require(float(p["a0"]) > 0, "problem.a0", "must be positive")
    _require(float(p["mu"]) >= 0, "problem.mu", "must be nonnegative")
    _require(1.0 < float(p["nonlinearity"]["p"]) < 3.0,
             "problem.nonlinearity.p", "must lie in (1, 3)")
    pot = p["potential"]
    _require(isinstance(pot, dict) and "kind" in pot, "problem.potential",
             "needs a 'kind' entry")
    _require(pot["kind"] in ("zero", "cosine", "rough", "coeff-file"),
             "problem.potential.kind", f"unknown kind {pot['kind']!r}")
    b = cfg["basis"]
    _require(int(b["M"]) >= 0, "basis.M", "must be nonnegative")
    _require(int(b["fine_factor"]) >= 2, "basis.fine_factor", "must be at least 2")
    s = cfg["solver"]
    _require(s["method"] in ("scf", "gradient_flow"), "solver.method",
             f"unknown method {s['method']!r}")
    _require(float(s["tol_residual"]) > 0, "solver.tol_residual", "must be positive")
    _require(0 < float(s["damping"]) <= 1, "solver.damping", "must lie in (0, 1]")
    _require(int(s["max_outer"]) > 0, "solver.max_outer", "must be positive")
    _require(float(cfg["linsolve"]["tol"]) > 0, "linsolve.tol", "must be positive")
    scheme = cfg["scheme"]
    for name in _scheme_list(scheme):
        _require(name in SCHEMES, "scheme", f"unknown scheme {name!r}")
    st = cfg["study"]
    _require(len(st["M_list"]) >= 1, "study.M_list", "must not be empty")
    _require(all(int(m) > 0 for m in st["M_list"]), "study.M_list",
             "cutoffs must be positive")
    _require(int(st["M_ref"]) >= 4 * max(int(m) for m in st["M_list"]),
             "study.M_ref", "must be at least 4 x the largest study cutoff")
    _require(int(st["fine_factor"]) >= 2, "study.fine_factor", "must be at least 2")
    for name in st["schemes"]:
        _require(name in SCHEMES, "study.schemes", f"unknown scheme {name!r}")
    _require(int(cfg["oracle"]["M"]) >= 0, "oracle.M", "must be nonnegative")


def _scheme_list(scheme) -> list:
    if isinstance(scheme, str):
        return [s.strip() for s in scheme.split(",") if s.strip()]
    return list(scheme)


# ---------------------------------------------------------------------------
# builders


def build_problem(cfg: dict) -> Problem:
    p = cfg["problem"]
    pot = p["potential"]
    V = make_potential(int(p["d"]), pot["kind"], pot.get("params"))
    return Problem(
        d=int(p["d"]),
        a0=float(p["a0"]),
        mu=float(p["mu"]),
        V=V,
        nl=Nonlinearity(p=float(p["nonlinearity"]["p"])),
    )


def build_solver(cfg: dict) -> SolverConfig:
    s = cfg["solver"]
    return SolverConfig(
        method=s["method"],
        tol_residual=float(s["tol_residual"]),
        max_outer=int(s["max_outer"]),
        damping=float(s["damping"]),
        flow_step=float(s["flow_step"]),
        inner_tol=float(s["inner_tol"]),
        inner_max_iter=int(s["inner_max_iter"]),
        dense_threshold=int(s["dense_threshold"]),
        seed=int(s["seed"]),
        fine_factor=int(cfg["basis"]["fine_factor"]),
    )


def build_linsolve(cfg: dict) -> LinSolveConfig:
    ls = cfg["linsolve"]
    return LinSolveConfig(
        tol=float(ls["tol"]),
        max_iter=int(ls["max_iter"]),
        min_fine_ratio=float(ls["min_fine_ratio"]),
    )


def build_eig(cfg: dict) -> EigSolveConfig:
    e = cfg["eig"]
    return EigSolveConfig(
        tol=float(e["tol"]),
        max_iter=int(e["max_iter"]),
        dense_threshold=int(e["dense_threshold"]),
        seed=int(e["seed"]),
    )


def build_study(cfg: dict) -> StudyConfig:
    st = cfg["study"]
    return StudyConfig(
        M_list=tuple(int(m) for m in st["M_list"]),
        M_ref=int(st["M_ref"]),
        fine_factor=int(st["fine_factor"]),
        bounds_fine_factor=int(st["bounds_fine_factor"]),
        schemes=tuple(st["schemes"]),
        certificate=bool(st["certificate"]),
        certificate_floor_M=int(st["certificate_floor_M"]),
        ref_tol=float(st["ref_tol"]),
        solver=build_solver(cfg),
        linsolve=build_linsolve(cfg),
        eig=build_eig(cfg),
        cache_dir=resolve_cache_dir(cfg),
    )


def resolve_cache_dir(cfg: dict) -> str | None:
    if cfg.get("cache_dir"):
        return str(cfg["cache_dir"])
    return os.environ.get(CACHE_ENV_VAR) or None


def scheme_selection(cfg: dict) -> list:
    return _scheme_list(cfg["scheme"])
