"""Convergence study harness: reference solutions, error measurement and
rate checks.

A study solves the problem on a list of coarse cutoffs, post-processes each
state with the selected schemes, evaluates the error estimators and measures
every error against a cached fine reference solution.  Log-log slopes of the
error relations are then fitted and compared against the expected windows:

    rule                    quantity (x -> y)                      window
    eigenvalue_quadratic    coarse err_h1 -> err_lambda          [ 1.7, 2.3]
    energy_quadratic        coarse err_h1 -> err_energy          [ 1.7, 2.3]
    newton_h1               coarse err_h1 -> newton err_h1       [ 1.7, 2.5]
    newton_energy           coarse err_h1 -> newton err_energy   [ 3.4, 4.6]
    perturbation_gain       M -> pert err_h1 / coarse err_h1     [-2.6,-1.4]

plus the energy sandwich, the residual-error stabilization ratio and the
certificate soundness checks.  Post-processed energy errors that fall below
the floating-point resolution of the energy difference are excluded from the
newton_energy fit; they carry no rate information.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .basis import (
    field_from_record,
    field_to_record,
    h_norm,
    make_basis,
    prolong,
)
from .errors import ConfigError
from .estimate import EstimateReport, kantorovich_certificate
from .linalg import EigSolveConfig
from .model import GroundState, Problem, residual, sign_aligned
from .postprocess import LinSolveConfig, reconstructed_error, run_scheme
from .solve import SolverConfig, solve_ground_state

#: study potential giving measurable errors over desk-scale cutoffs
DEFAULT_STUDY_POTENTIAL = {
    "kind": "rough",
    "params": {"amplitude": 2.0, "sigma": 1.45, "k_knee": 4.0, "k_max": 256, "seed": 3},
}

DEFAULT_STUDY_POTENTIAL_2D = {
    "kind": "rough",
    "params": {"amplitude": 0.5, "sigma": 1.3, "k_knee": 2.0, "k_max": 16, "seed": 3},
}

RATE_WINDOWS = {
    "eigenvalue_quadratic": (1.7, 2.3),
    "energy_quadratic": (1.7, 2.3),
    "newton_h1": (1.7, 2.5),
    "newton_energy": (3.4, 4.6),
    "perturbation_gain": (-2.6, -1.4),
}

RSQUARED_MIN = 0.95
SANDWICH_MIN_M = 12
SANDWICH_GAP_FACTOR = 0.2
#: the lower energy bound is asymptotic; inequality violations up to this
#: fraction of the bracket width are higher-order dust, not bound failures
SANDWICH_SLACK_REL = 1e-6
STABILIZATION_MAX_VARIATION = 0.2


@dataclass(frozen=True)
class StudyConfig:
    M_list: tuple = (8, 12, 16, 24, 32)
    M_ref: int = 256
    fine_factor: int = 4
    bounds_fine_factor: int = 8
    schemes: tuple = ("newton", "tg1", "pert")
    certificate: bool = True
    certificate_floor_M: int = 2
    ref_tol: float = 1e-12
    solver: SolverConfig = field(default_factory=lambda: SolverConfig(tol_residual=1e-11, max_outer=900))
    linsolve: LinSolveConfig = field(default_factory=LinSolveConfig)
    eig: EigSolveConfig = field(default_factory=EigSolveConfig)
    cache_dir: str | None = None

    def __post_init__(self):
        if len(self.M_list) == 0:
            raise ConfigError("study needs at least one coarse cutoff")
        if self.M_ref < 4 * max(self.M_list):
            raise ConfigError(
                f"reference cutoff {self.M_ref} must be at least 4 x max study cutoff"
            )
        if self.fine_factor < 2:
            raise ConfigError("fine factor must be at least 2")
        unknown = set(self.schemes) - {"newton", "tg1", "tg2a", "tg2b", "pert"}
        if unknown:
            raise ConfigError(f"unknown schemes in study: {sorted(unknown)}")


# ---------------------------------------------------------------------------
# reference solutions with content-addressed caching


def _problem_record(problem: Problem) -> dict:
    return {
        "d": problem.d,
        "a0": problem.a0,
        "mu": problem.mu,
        "p": problem.nl.p,
        "V": field_to_record(problem.V),
    }


def _reference_key(problem: Problem, M_ref: int, cfg: SolverConfig) -> str:
    payload = {
        "problem": _problem_record(problem),
        "M_ref": M_ref,
        "solver": asdict(cfg),
        "format": 1,
    }
    blob = json.dumps(payload, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


def reference_solution(
    problem: Problem,
    M_ref: int,
    cfg: SolverConfig | None = None,
    cache_dir: str | None = None,
) -> GroundState:
    """Tightly converged solve at the reference cutoff, cached on disk.

    The cache entry is keyed by a content hash of the problem, the cutoff
    and the solver settings; a corrupt or mismatched entry is recomputed.
    """
    cfg = cfg or SolverConfig(tol_residual=1e-12, max_outer=900)
    key = _reference_key(problem, M_ref, cfg)
    path = None
    if cache_dir:
        os.makedirs(cache_dir, exist_ok=True)
        path = os.path.join(cache_dir, f"ref-{key[:16]}.json")
        gs = _load_reference(path, key, problem)
        if gs is not None:
            return gs
    gs = solve_ground_state(problem, make_basis(problem.d, M_ref), cfg)
    if path:
        _store_reference(path, key, gs)
    return gs


def _load_reference(path, key, problem):
    try:
        with open(path) as f:
            rec = json.load(f)
        if rec.get("key") != key:
            return None
        return GroundState(
            problem=problem,
            basis=make_basis(problem.d, int(rec["M"])),
            u=field_from_record(rec["field"]),
            lam=float(rec["lambda"]),
            energy=float(rec["energy"]),
            residual_dual_norm=float(rec["residual_dual_norm"]),
            iterations=int(rec["iterations"]),
            converged=True,
            gap=rec.get("gap"),
        )
    except (OSError, ValueError, KeyError):
        return None


def _store_reference(path, key, gs: GroundState):
    rec = {
        "key": key,
        "M": gs.basis.M,
        "lambda": gs.lam,
        "energy": gs.energy,
        "residual_dual_norm": gs.residual_dual_norm,
        "iterations": gs.iterations,
        "gap": gs.gap,
        "field": field_to_record(gs.u),
    }
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w") as f:
        json.dump(rec, f)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# error measurement and rate fitting


def measure(problem: Problem, candidate, ref: GroundState) -> dict:
    """Errors of a state or correction against the reference solution.

    The candidate field is prolonged onto the reference ball and sign
    aligned before differencing.  Energy errors of conforming candidates are
    nonnegative up to round-off by the variational inclusion.
    """
    if hasattr(candidate, "u_hat"):
        u, lam, en = candidate.u_hat, candidate.lambda_hat, candidate.energy_hat
    else:
        u, lam, en = candidate.u, candidate.lam, candidate.energy
    if u.basis.M > ref.basis.M:
        raise ConfigError("candidate cutoff exceeds the reference cutoff")
    diff = sign_aligned(prolong(u, ref.basis), ref.u) - ref.u
    return {
        "err_h1": h_norm(diff, 1.0),
        "err_l2": h_norm(diff, 0.0),
        "err_lambda": abs(lam - ref.lam),
        "err_energy": en - ref.energy,
    }


def fit_rate(points) -> tuple[float, float]:
    """Least-squares slope of log y against log x; returns (slope, R^2)."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError(f"rate fit needs at least 3 points, got {len(pts)}")
    if any(x <= 0 or y <= 0 for x, y in pts):
        raise ValueError("rate fit needs strictly positive data")
    lx = np.log([x for x, _ in pts])
    ly = np.log([y for _, y in pts])
    design = np.vstack([lx, np.ones_like(lx)]).T
    coef, rss, *_ = np.linalg.lstsq(design, ly, rcond=None)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    if ss_tot == 0.0:
        r2 = 1.0
    else:
        resid = float(rss[0]) if rss.size else float(np.sum((ly - design @ coef) ** 2))
        r2 = 1.0 - resid / ss_tot
    return float(coef[0]), float(r2)


def energy_floor(ref: GroundState) -> float:
    """Smallest energy difference distinguishable from round-off."""
    return 100.0 * np.finfo(float).eps * (1.0 + abs(ref.energy))


# ---------------------------------------------------------------------------
# the study driver


@dataclass
class StudyRecord:
    M: int
    coarse: dict
    schemes: dict
    estimates: dict
    timings: dict


@dataclass
class StudyReport:
    problem: dict
    config: dict
    reference: dict
    records: list
    floor_certificate: dict | None
    slopes: dict
    acceptance: dict


def run_study(problem: Problem, cfg: StudyConfig | None = None) -> StudyReport:
    cfg = cfg or StudyConfig()
    ref_cfg = SolverConfig(
        tol_residual=cfg.ref_tol,
        max_outer=cfg.solver.max_outer,
        method=cfg.solver.method,
        damping=cfg.solver.damping,
        seed=cfg.solver.seed,
        dense_threshold=cfg.solver.dense_threshold,
    )
    ref = reference_solution(problem, cfg.M_ref, ref_cfg, cfg.cache_dir)
    cert_possible = cfg.certificate and problem.d == 1 and problem.nl.is_cubic
    records = []
    for M in cfg.M_list:
        records.append(_study_point(problem, int(M), ref, cfg, cert_possible))
    floor_cert = None
    if cert_possible and cfg.certificate_floor_M is not None:
        floor_cert = _floor_certificate(problem, cfg, ref)
    slopes = _fit_relations(records, ref)
    acceptance = _evaluate_acceptance(records, slopes, ref, floor_cert)
    return StudyReport(
        problem=_problem_summary(problem),
        config={
            "M_list": list(cfg.M_list),
            "M_ref": cfg.M_ref,
            "fine_factor": cfg.fine_factor,
            "schemes": list(cfg.schemes),
            "ref_tol": cfg.ref_tol,
        },
        reference={
            "M": ref.basis.M,
            "lambda": ref.lam,
            "energy": ref.energy,
            "residual_dual_norm": ref.residual_dual_norm,
            "iterations": ref.iterations,
        },
        records=records,
        floor_certificate=floor_cert,
        slopes=slopes,
        acceptance=acceptance,
    )


def _problem_summary(problem: Problem) -> dict:
    return {
        "d": problem.d,
        "a0": problem.a0,
        "mu": problem.mu,
        "p": problem.nl.p,
        "potential_cutoff": problem.V.basis.M,
    }


def _study_point(problem, M, ref, cfg, cert_possible) -> StudyRecord:
    timings = {}
    t0 = time.perf_counter()
    gs = solve_ground_state(problem, make_basis(problem.d, M), cfg.solver)
    timings["solve"] = time.perf_counter() - t0
    fine = make_basis(problem.d, cfg.fine_factor * M)
    coarse = measure(problem, gs, ref)
    coarse["lambda"] = gs.lam
    coarse["energy"] = gs.energy
    coarse["iterations"] = gs.iterations
    coarse["residual_dual"] = h_norm(residual(problem, gs, fine), -1.0)
    schemes = {}
    newton_corr = None
    for name in cfg.schemes:
        t0 = time.perf_counter()
        corr = run_scheme(name, problem, gs, fine, lin=cfg.linsolve, eig=cfg.eig)
        timings[name] = time.perf_counter() - t0
        entry = measure(problem, corr, ref)
        entry["lambda_hat"] = corr.lambda_hat
        entry["energy_hat"] = corr.energy_hat
        entry["a_ww"] = corr.a_ww
        entry["improvement_h1"] = entry["err_h1"] / coarse["err_h1"] if coarse["err_h1"] else 0.0
        schemes[name] = entry
        if name == "newton":
            newton_corr = corr
    estimates = {
        "residual_dual": coarse["residual_dual"],
        "ratio_h1_residual": coarse["err_h1"] / coarse["residual_dual"]
        if coarse["residual_dual"]
        else float("nan"),
        "energy_upper": gs.energy,
        "gap": gs.gap,
    }
    # the energy bracket needs the correction converged in space, so it is
    # recomputed on a larger ball than the post-processing schemes use
    bounds_M = min(cfg.bounds_fine_factor * M, cfg.M_ref)
    if bounds_M > fine.M or newton_corr is None:
        t0 = time.perf_counter()
        newton_corr = reconstructed_error(
            problem, gs, make_basis(problem.d, bounds_M), cfg.linsolve
        )
        timings["bounds"] = time.perf_counter() - t0
    estimates["a_ww"] = newton_corr.a_ww
    estimates["energy_lower"] = gs.energy - 0.5 * newton_corr.a_ww
    if cert_possible:
        t0 = time.perf_counter()
        rep = kantorovich_certificate(problem, gs, fine, cfg.eig)
        timings["certificate"] = time.perf_counter() - t0
        estimates["certificate"] = _certificate_summary(rep)
    return StudyRecord(M=M, coarse=coarse, schemes=schemes, estimates=estimates, timings=timings)


def _certificate_summary(rep: EstimateReport) -> dict:
    return {
        "eps": rep.eps,
        "gamma": rep.gamma,
        "L_of_2eps": rep.L_of_2eps,
        "validity_alpha": rep.validity_alpha,
        "certified": rep.certified,
        "error_bound_h1": rep.error_bound_h1,
        "error_bound_sharp": rep.error_bound_sharp,
        "gap": rep.gap,
        "reason": rep.reason,
    }


def _floor_certificate(problem, cfg, ref) -> dict:
    M = int(cfg.certificate_floor_M)
    gs = solve_ground_state(problem, make_basis(problem.d, M), cfg.solver)
    fine = make_basis(problem.d, cfg.fine_factor * M)
    rep = kantorovich_certificate(problem, gs, fine, cfg.eig)
    out = _certificate_summary(rep)
    out["M"] = M
    out["err_h1"] = measure(problem, gs, ref)["err_h1"]
    return out


def _fit_relations(records, ref) -> dict:
    slopes = {}
    if len(records) < 3:
        return slopes
    e1 = [r.coarse["err_h1"] for r in records]
    slopes["eigenvalue_quadratic"] = fit_rate(
        zip(e1, [r.coarse["err_lambda"] for r in records])
    )
    slopes["energy_quadratic"] = fit_rate(
        zip(e1, [r.coarse["err_energy"] for r in records])
    )
    if all("newton" in r.schemes for r in records):
        slopes["newton_h1"] = fit_rate(
            zip(e1, [r.schemes["newton"]["err_h1"] for r in records])
        )
        floor = energy_floor(ref)
        pts = [
            (x, abs(r.schemes["newton"]["err_energy"]))
            for x, r in zip(e1, records)
            if abs(r.schemes["newton"]["err_energy"]) > floor
        ]
        if len(pts) >= 3:
            slopes["newton_energy"] = fit_rate(pts)
        else:
            slopes["newton_energy"] = None
    if all("pert" in r.schemes for r in records):
        slopes["perturbation_gain"] = fit_rate(
            [(r.M, r.schemes["pert"]["improvement_h1"]) for r in records]
        )
    return slopes


def _evaluate_acceptance(records, slopes, ref, floor_cert) -> dict:
    out = {}

    def rate_rule(name):
        fitted = slopes.get(name)
        lo, hi = RATE_WINDOWS[name]
        if fitted is None:
            return {"passed": False, "detail": "insufficient measurable points"}
        slope, r2 = fitted
        ok = lo <= slope <= hi
        needs_r2 = name in ("eigenvalue_quadratic", "energy_quadratic")
        if needs_r2:
            ok = ok and r2 >= RSQUARED_MIN
        return {
            "passed": bool(ok),
            "slope": slope,
            "r_squared": r2,
            "window": [lo, hi],
        }

    for name in RATE_WINDOWS:
        if name in slopes:
            out[name] = rate_rule(name)
    # energy sandwich
    sandwich_ok = True
    detail = []
    for r in records:
        if r.M < SANDWICH_MIN_M:
            continue
        lower = r.estimates["energy_lower"]
        upper = r.estimates["energy_upper"]
        slack = max(energy_floor(ref), SANDWICH_SLACK_REL * max(upper - lower, 0.0))
        ok = (lower - slack <= ref.energy) and (ref.energy <= upper + slack)
        sandwich_ok &= ok
        detail.append({"M": r.M, "lower": lower, "upper": upper,
                       "slack": slack, "ok": bool(ok)})
    if detail:
        finest = max((r for r in records if r.M >= SANDWICH_MIN_M), key=lambda r: r.M)
        gap_lo = abs(ref.energy - finest.estimates["energy_lower"])
        gap_hi = finest.estimates["energy_upper"] - ref.energy
        tight = gap_lo <= SANDWICH_GAP_FACTOR * gap_hi
        out["energy_sandwich"] = {
            "passed": bool(sandwich_ok and tight),
            "points": detail,
            "finest_lower_gap": gap_lo,
            "finest_upper_gap": gap_hi,
        }
    # residual-error stabilization
    if len(records) >= 3:
        ratios = [r.estimates["ratio_h1_residual"] for r in records[-3:]]
        var = (max(ratios) - min(ratios)) / min(ratios)
        out["residual_equivalence"] = {
            "passed": bool(var < STABILIZATION_MAX_VARIATION),
            "variation": var,
            "ratios": ratios,
        }
    # certificate soundness
    cert_points = [
        (r, r.estimates["certificate"]) for r in records if "certificate" in r.estimates
    ]
    if cert_points:
        sound = True
        any_certified = False
        detail = []
        for r, c in cert_points:
            if c["certified"]:
                any_certified = True
                ok = r.coarse["err_h1"] <= c["error_bound_h1"]
                sound &= ok
                detail.append({"M": r.M, "err_h1": r.coarse["err_h1"],
                               "bound": c["error_bound_h1"], "ok": bool(ok)})
        floor_ok = floor_cert is None or not floor_cert["certified"]
        out["certificate_soundness"] = {
            "passed": bool(sound and floor_ok and any_certified),
            "certified_points": detail,
            "floor_not_certified": bool(floor_ok),
        }
    return out


# ---------------------------------------------------------------------------
# tabular output


CSV_COARSE_COLS = ("err_h1", "err_l2", "err_lambda", "err_energy", "lambda", "energy")
CSV_SCHEME_COLS = ("err_h1", "err_l2", "err_lambda", "err_energy", "improvement_h1")


def report_to_rows(report: StudyReport):
    """Flatten the study records into (header, rows) for delimited output."""
    schemes = report.config["schemes"]
    header = ["M"]
    header += [f"coarse_{c}" for c in CSV_COARSE_COLS]
    header += ["residual_dual", "ratio_h1_residual", "energy_lower", "energy_upper",
               "a_ww", "gap"]
    for s in schemes:
        header += [f"{s}_{c}" for c in CSV_SCHEME_COLS]
    header += ["cert_eps", "cert_gamma", "cert_alpha", "cert_certified",
               "cert_bound_h1", "t_solve"]
    rows = []
    for r in report.records:
        row = [r.M]
        row += [r.coarse[c] for c in CSV_COARSE_COLS]
        est = r.estimates
        row += [est["residual_dual"], est["ratio_h1_residual"],
                est["energy_lower"], est["energy_upper"], est["a_ww"], est["gap"]]
        for s in schemes:
            entry = r.schemes.get(s)
            row += [entry[c] if entry else "" for c in CSV_SCHEME_COLS]
        cert = est.get("certificate")
        if cert:
            row += [cert["eps"], cert["gamma"], cert["validity_alpha"],
                    int(cert["certified"]), cert["error_bound_h1"]]
        else:
            row += ["", "", "", "", ""]
        row.append(r.timings.get("solve", ""))
        rows.append(row)
    return header, rows


def write_study_csv(report: StudyReport, path) -> None:
    import csv

    header, rows = report_to_rows(report)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        writer.writerows(rows)


def report_to_json(report: StudyReport) -> dict:
    return {
        "problem": report.problem,
        "config": report.config,
        "reference": report.reference,
        "records": [
            {
                "M": r.M,
                "coarse": r.coarse,
                "schemes": r.schemes,
                "estimates": r.estimates,
                "timings": r.timings,
            }
            for r in report.records
        ],
        "floor_certificate": report.floor_certificate,
        "slopes": {
            k: (None if v is None else {"slope": v[0], "r_squared": v[1]})
            for k, v in report.slopes.items()
        },
        "acceptance": report.acceptance,
    }
