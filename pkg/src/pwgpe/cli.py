"""Command-line interface.

Subcommands: solve, postprocess, estimate, study, oracle.  Every command
reads one JSON config (flags override file values, file values override the
defaults), validates it fully, runs, and writes its outputs into the output
directory.  All payload values are deterministic for a fixed (config, seed);
timestamps live in a separate "meta" block.

Exit codes: 0 success, 2 configuration error, 3 nonconvergence,
4 unsupported certificate or violated precondition.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import json
import os
import sys
import time

from . import __version__
from .basis import l2_norm, make_basis, save_field
from .config import (
    build_eig,
    build_linsolve,
    build_problem,
    build_solver,
    build_study,
    load_config,
    scheme_selection,
)
from .errors import (
    AliasingError,
    BasisMismatchError,
    BasisTooLargeError,
    CertificateUnsupportedError,
    CoercivityViolatedError,
    ConfigError,
    CorrectionTooLargeError,
    DegenerateGroundStateError,
    DegenerateProjectorError,
    DiagonalNotInvertibleError,
    IndefiniteOperatorError,
    NearSingularError,
    NonconvergenceError,
    PwgpeError,
)
from .estimate import full_report
from .oracle import oracle_ground_state
from .postprocess import reconstructed_error, run_scheme
from .solve import solve_ground_state
from .study import report_to_json, run_study, write_study_csv

_EXIT_CONFIG = 2
_EXIT_NONCONVERGENCE = 3
_EXIT_PRECONDITION = 4

_PRECONDITION_ERRORS = (
    CertificateUnsupportedError,
    DiagonalNotInvertibleError,
    CorrectionTooLargeError,
    NearSingularError,
    IndefiniteOperatorError,
    CoercivityViolatedError,
    DegenerateProjectorError,
    AliasingError,
    BasisMismatchError,
)
_NONCONVERGENCE_ERRORS = (NonconvergenceError, DegenerateGroundStateError)
_CONFIG_ERRORS = (ConfigError, BasisTooLargeError)


def _meta() -> dict:
    return {
        "tool": "pwgpe",
        "version": __version__,
        "timestamp": datetime.datetime.now(datetime.timezone.utc).isoformat(),
    }


def _jsonable(value):
    """Strict-JSON payloads: non-finite floats become null."""
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, float) and not (value == value and abs(value) != float("inf")):
        return None
    return value


def _write_json(path, payload: dict) -> None:
    doc = {"meta": _meta(), **_jsonable(payload)}
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True, allow_nan=False)
        f.write("\n")


def _ground_state_payload(gs) -> dict:
    return {
        "basis": {"d": gs.basis.d, "M": gs.basis.M, "N": gs.basis.N},
        "lambda": gs.lam,
        "energy": gs.energy,
        "residual_dual_norm": gs.residual_dual_norm,
        "iterations": gs.iterations,
        "converged": gs.converged,
        "gap": gs.gap,
    }


def _write_trace(path, gs) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["iteration", "energy", "residual", "lambda"])
        for row in gs.trace:
            writer.writerow(list(row))


def _solve_from_config(cfg):
    problem = build_problem(cfg)
    basis = make_basis(problem.d, int(cfg["basis"]["M"]))
    return problem, solve_ground_state(problem, basis, build_solver(cfg))


def cmd_solve(cfg, outdir) -> int:
    problem, gs = _solve_from_config(cfg)
    _write_json(os.path.join(outdir, "ground_state.json"), _ground_state_payload(gs))
    save_field(gs.u, os.path.join(outdir, "ground_state.field.json"))
    _write_trace(os.path.join(outdir, "trace.csv"), gs)
    print(f"solved M={gs.basis.M}: lambda={gs.lam:.12g} energy={gs.energy:.12g} "
          f"residual={gs.residual_dual_norm:.3e} iterations={gs.iterations}")
    return 0


def cmd_postprocess(cfg, outdir) -> int:
    problem, gs = _solve_from_config(cfg)
    fine = make_basis(problem.d, int(cfg["basis"]["fine_factor"]) * gs.basis.M)
    lin = build_linsolve(cfg)
    eig = build_eig(cfg)
    _write_json(os.path.join(outdir, "ground_state.json"), _ground_state_payload(gs))
    save_field(gs.u, os.path.join(outdir, "ground_state.field.json"))
    for name in scheme_selection(cfg):
        corr = run_scheme(name, problem, gs, fine, lin=lin, eig=eig)
        payload = {
            "scheme": corr.scheme,
            "fine_M": fine.M,
            "alpha_star": corr.alpha_star,
            "w_norm_l2": l2_norm(corr.w_hat),
            "lambda_hat": corr.lambda_hat,
            "energy_hat": corr.energy_hat,
            "a_ww": corr.a_ww,
            "info": corr.info,
        }
        _write_json(os.path.join(outdir, f"correction_{name}.json"), payload)
        save_field(corr.u_hat, os.path.join(outdir, f"correction_{name}.field.json"))
        print(f"{name}: lambda_hat={corr.lambda_hat:.12g} energy_hat={corr.energy_hat:.12g}")
    return 0


def cmd_estimate(cfg, outdir) -> int:
    problem, gs = _solve_from_config(cfg)
    fine = make_basis(problem.d, int(cfg["basis"]["fine_factor"]) * gs.basis.M)
    corr = reconstructed_error(problem, gs, fine, build_linsolve(cfg))
    rep = full_report(
        problem, gs, fine, corr=corr, eig=build_eig(cfg),
        with_certificate=bool(cfg["estimator"]["certificate"]),
    )
    payload = {
        "fine_M": fine.M,
        "residual_dual": rep.residual_dual,
        "energy_lower": rep.energy_lower,
        "energy_upper": rep.energy_upper,
        "a_ww": rep.a_ww,
        "gap": rep.gap,
        "lambda1": rep.lambda1,
        "lambda2": rep.lambda2,
        "gamma": rep.gamma,
        "eps": rep.eps,
        "L_of_2eps": rep.L_of_2eps,
        "validity_alpha": rep.validity_alpha,
        "certified": rep.certified,
        "error_bound_h1": rep.error_bound_h1,
        "error_bound_sharp": rep.error_bound_sharp,
        "label": rep.label,
        "reason": rep.reason,
    }
    _write_json(os.path.join(outdir, "estimate.json"), payload)
    rows = [
        ("residual dual norm", f"{rep.residual_dual:.6e}"),
        ("energy upper bound", f"{rep.energy_upper:.12g}"),
        ("energy lower bound", f"{rep.energy_lower:.12g}"),
        ("frozen gap", f"{rep.gap:.6e}"),
        ("newton step size eps", f"{rep.eps:.6e}"),
        ("stability gamma", f"{rep.gamma:.6e}"),
        ("validity 2*gamma*L(2eps)", f"{rep.validity_alpha:.6e}"),
        ("certified", str(rep.certified)),
        ("H1+lambda error bound", f"{rep.error_bound_h1:.6e}"),
        ("sharp bound 2*eps", f"{rep.error_bound_sharp:.6e}"),
    ]
    width = max(len(k) for k, _ in rows)
    for k, v in rows:
        print(f"  {k:<{width}}  {v}")
    return 0


def cmd_study(cfg, outdir) -> int:
    problem = build_problem(cfg)
    report = run_study(problem, build_study(cfg))
    write_study_csv(report, os.path.join(outdir, "study.csv"))
    _write_json(os.path.join(outdir, "report.json"), report_to_json(report))
    from .figures import render_study_figures, write_plot_script

    figures = render_study_figures(report, outdir)
    script = write_plot_script(outdir)
    for name, result in report.acceptance.items():
        print(f"  {name:<24} {'PASS' if result['passed'] else 'FAIL'}")
    print(f"wrote study.csv, report.json, {len(figures)} figures, {os.path.basename(script)}")
    return 0 if all(r["passed"] for r in report.acceptance.values()) else 1


def cmd_oracle(cfg, outdir) -> int:
    problem = build_problem(cfg)
    gs = oracle_ground_state(problem, int(cfg["oracle"]["M"]))
    _write_json(os.path.join(outdir, "oracle_ground_state.json"), _ground_state_payload(gs))
    save_field(gs.u, os.path.join(outdir, "oracle_ground_state.field.json"))
    print(f"oracle M={gs.basis.M}: lambda={gs.lam:.12g} energy={gs.energy:.12g} "
          f"residual={gs.residual_dual_norm:.3e}")
    return 0


_COMMANDS = {
    "solve": cmd_solve,
    "postprocess": cmd_postprocess,
    "estimate": cmd_estimate,
    "study": cmd_study,
    "oracle": cmd_oracle,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pwgpe",
        description="Planewave solver and error-certification toolkit for the "
        "periodic nonlinear ground-state eigenvalue problem.",
    )
    parser.add_argument("--version", action="version", version=f"pwgpe {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the ground state on one cutoff ball"),
        ("postprocess", "solve, then apply the selected correction schemes"),
        ("estimate", "solve, then compute estimator report and certificate"),
        ("study", "convergence study against a fine reference solution"),
        ("oracle", "dense brute-force solve for tiny bases"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("-c", "--config", help="JSON config file")
        p.add_argument("-o", "--out", default=None, help="output directory")
        p.add_argument("--M", type=int, help="override basis.M (oracle: oracle.M)")
        p.add_argument("--fine-factor", type=int, help="override basis.fine_factor")
        p.add_argument("--scheme", help="override scheme selection (comma separated)")
        p.add_argument("--method", help="override solver.method")
        p.add_argument("--seed", type=int, help="override the run seed")
        p.add_argument("--M-ref", type=int, help="override study.M_ref")
        p.add_argument("--cache-dir", help="override the reference cache directory")
    return parser


def _overrides(args) -> dict:
    out = {}
    if args.M is not None:
        out["oracle.M" if args.command == "oracle" else "basis.M"] = args.M
    if args.fine_factor is not None:
        out["basis.fine_factor"] = args.fine_factor
        out["study.fine_factor"] = args.fine_factor
    if args.scheme is not None:
        out["scheme"] = args.scheme
    if args.method is not None:
        out["solver.method"] = args.method
    if args.seed is not None:
        out["seed"] = args.seed
    if args.M_ref is not None:
        out["study.M_ref"] = args.M_ref
    if args.cache_dir is not None:
        out["cache_dir"] = args.cache_dir
    return out


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides(args))
        outdir = args.out or cfg["output_dir"]
        os.makedirs(outdir, exist_ok=True)
        t0 = time.perf_counter()
        code = _COMMANDS[args.command](cfg, outdir)
        print(f"done in {time.perf_counter() - t0:.2f}s -> {outdir}")
        return code
    except _CONFIG_ERRORS as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return _EXIT_CONFIG
    except _NONCONVERGENCE_ERRORS as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return _EXIT_NONCONVERGENCE
    except _PRECONDITION_ERRORS as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return _EXIT_PRECONDITION
    except PwgpeError as exc:
        print(f"error [{exc.code}]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
