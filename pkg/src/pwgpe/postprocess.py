"""Fine-space post-processing of a converged coarse state.

All schemes take the coarse state (u, lam) and produce a unit-norm improved
state on a finer cutoff ball:

* ``newton`` solves the linearized correction equation on the orthogonal
  complement of u and renormalizes; one linear solve, quadratic gain.
* ``tg1`` recomputes the lowest eigenpair of the frozen operator on the
  fine ball.
* ``tg2a`` solves (A + mu g(u^2)) u_f = lam * u on the fine ball, deflating
  the lowest frozen eigenvector so the remaining solve is definite.
* ``tg2b`` solves A u_f = lam * u - mu g(u^2) u with the bare linear
  operator, which must be positive definite (or diagonal, when V = 0).
* ``pert`` updates only the new fine modes through the diagonal resolvent
  of the kinetic part; two transforms, no iterative solve.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .basis import (
    BasisSpec,
    SpectralField,
    field_from_real_vector,
    h_norm,
    l2_inner,
    l2_norm,
    project_orthogonal,
    prolong,
    real_vector,
)
from .errors import (
    BasisMismatchError,
    CoercivityViolatedError,
    CorrectionTooLargeError,
    DiagonalNotInvertibleError,
    IndefiniteOperatorError,
    NearSingularError,
)
from .linalg import (
    EigSolveConfig,
    as_real_operator,
    lowest_eigenpairs,
    pcg,
    projector_against,
)
from .model import (
    GroundState,
    PointwiseOperator,
    Problem,
    energy,
    normalized,
    rayleigh,
    residual,
)


@dataclass(frozen=True)
class LinSolveConfig:
    tol: float = 1e-10
    max_iter: int = 20000
    min_fine_ratio: float = 2.0


@dataclass(frozen=True)
class Correction:
    """Post-processed state with its correction field and diagnostics.

    w_hat is the component of u_hat orthogonal to the coarse state, and
    a_ww the value of the linearized form on it (the second-order energy
    decrement).  alpha_star is the affine normalization coefficient,
    u_hat = (1 - alpha_star) u + w_hat.
    """

    scheme: str
    basis: BasisSpec
    w_hat: SpectralField
    alpha_star: float
    u_hat: SpectralField
    lambda_hat: float
    energy_hat: float
    a_ww: float
    info: dict


def normalize_correction(gs: GroundState, w_hat: SpectralField, mode: str = "affine"):
    """Build the unit-norm post-processed state from an orthogonal correction.

    affine: u_hat = (1 - alpha) u + w with (1 - alpha)^2 = 1 - |w|^2, which
    exists only while |w| < 1.  radial: u_hat = beta (u + w) with
    beta = (1 + |w|^2)^(-1/2).  Returns (coefficient, u_hat).
    """
    u = prolong(gs.u, w_hat.basis)
    ortho = abs(l2_inner(w_hat, u))
    if ortho > 1e-9 * max(1.0, l2_norm(w_hat)):
        raise BasisMismatchError(
            f"correction is not orthogonal to the state (inner product {ortho:.2e})"
        )
    s2 = l2_norm(w_hat) ** 2
    if mode == "affine":
        if s2 >= 1.0:
            raise CorrectionTooLargeError(
                f"|w| = {np.sqrt(s2):.3f} >= 1; affine normalization impossible"
            )
        c = float(np.sqrt(1.0 - s2))
        return 1.0 - c, c * u + w_hat
    if mode == "radial":
        beta = float(1.0 / np.sqrt(1.0 + s2))
        return beta, beta * (u + w_hat)
    raise ValueError(f"unknown normalization mode {mode!r}")


def _linearized(problem: Problem, gs: GroundState, fine: BasisSpec):
    op = PointwiseOperator(problem, gs.u, fine, kind="linearized", shift=gs.lam)
    return as_real_operator(fine, op), op


def _frozen(problem: Problem, gs: GroundState, fine: BasisSpec):
    op = PointwiseOperator(problem, gs.u, fine, kind="fock")
    return as_real_operator(fine, op), op


def _a_ww(apply_lin_vec, w: SpectralField) -> float:
    wvec = real_vector(w)
    return float(wvec @ apply_lin_vec(wvec))


def _finalize(scheme, problem, gs, fine, u_hat, info, apply_lin_vec=None,
              w_hat=None, alpha=None) -> Correction:
    u_f = prolong(gs.u, fine)
    if l2_inner(u_hat, u_f) < 0.0:
        u_hat = -u_hat
        w_hat = None
    if w_hat is None:
        w_hat = project_orthogonal(u_hat, u_f)
    if apply_lin_vec is None:
        apply_lin_vec, _ = _linearized(problem, gs, fine)
    if alpha is None:
        alpha = 1.0 - l2_inner(u_hat, u_f)
    return Correction(
        scheme=scheme,
        basis=fine,
        w_hat=w_hat,
        alpha_star=alpha,
        u_hat=u_hat,
        lambda_hat=rayleigh(problem, u_hat),
        energy_hat=energy(problem, u_hat),
        a_ww=_a_ww(apply_lin_vec, w_hat),
        info=info,
    )


def reconstructed_error(
    problem: Problem,
    gs: GroundState,
    fine: BasisSpec,
    lin: LinSolveConfig | None = None,
) -> Correction:
    """Single linearized (Newton) correction solved on the complement of u.

    Solves  (A + mu[2 g'(u^2) u^2 + g(u^2)] - lam) w = -(A + mu g(u^2) - lam) u
    on the fine ball against test fields orthogonal to u, with projected CG
    and the diagonal a0 (1 + |k|^2) preconditioner.
    """
    lin = lin or LinSolveConfig()
    if fine.M < lin.min_fine_ratio * gs.basis.M:
        raise BasisMismatchError(
            f"fine cutoff {fine.M} below {lin.min_fine_ratio} x coarse {gs.basis.M}"
        )
    apply_vec, _ = _linearized(problem, gs, fine)
    uvec = real_vector(prolong(gs.u, fine))
    project = projector_against(uvec)
    rhs = project(-real_vector(residual(problem, gs, fine)))
    weights = problem.a0 * (1.0 + fine.real_k2)
    wvec, stats = pcg(
        apply_vec, rhs, weights, problem.a0,
        tol_dual=lin.tol, max_iter=lin.max_iter,
        project=project, on_indefinite=CoercivityViolatedError,
    )
    w_hat = field_from_real_vector(fine, project(wvec))
    a_ww = _a_ww(apply_vec, w_hat)
    if a_ww < -10.0 * lin.tol * max(1.0, h_norm(w_hat, 1.0) ** 2):
        raise CoercivityViolatedError(
            f"linearized form is negative on the correction (a_ww = {a_ww:.3e})"
        )
    alpha, u_hat = normalize_correction(gs, w_hat, mode="affine")
    return _finalize(
        "newton", problem, gs, fine, u_hat,
        {"linsolve": stats}, apply_lin_vec=apply_vec, w_hat=w_hat, alpha=alpha,
    )


def two_grid_scheme1(
    problem: Problem,
    gs: GroundState,
    fine: BasisSpec,
    eig: EigSolveConfig | None = None,
) -> Correction:
    """Lowest eigenpair of the frozen operator recomputed on the fine ball."""
    eig = eig or EigSolveConfig()
    apply_vec, _ = _frozen(problem, gs, fine)
    weights = problem.a0 * (1.0 + fine.real_k2)
    x0 = real_vector(prolong(gs.u, fine))[:, None]
    vals, vecs = lowest_eigenpairs(apply_vec, fine, 2, weights, eig, x0=x0)
    u_hat = normalized(field_from_real_vector(fine, vecs[:, 0]))
    info = {"lambda_frozen": float(vals[0]), "gap_frozen": float(vals[1] - vals[0])}
    return _finalize("tg1", problem, gs, fine, u_hat, info)


def two_grid_scheme2a(
    problem: Problem,
    gs: GroundState,
    fine: BasisSpec,
    lin: LinSolveConfig | None = None,
    eig: EigSolveConfig | None = None,
) -> Correction:
    """Frozen-operator boundary value solve (A + mu g(u^2)) u_f = lam u.

    The frozen operator has its lowest eigenvalue near lam, so the solve is
    deflated: the component along the lowest frozen eigenvector is read off
    the eigenvalue directly and the remainder is solved by projected CG on
    the definite complement.  A lowest eigenvalue within 1e-8 of zero makes
    the diagonal component meaningless; it is dropped and flagged.
    """
    lin = lin or LinSolveConfig()
    eig = eig or EigSolveConfig()
    apply_vec, _ = _frozen(problem, gs, fine)
    weights = problem.a0 * (1.0 + fine.real_k2)
    x0 = real_vector(prolong(gs.u, fine))[:, None]
    vals, vecs = lowest_eigenpairs(apply_vec, fine, 2, weights, eig, x0=x0)
    lam1, lam2 = float(vals[0]), float(vals[1])
    if lam2 <= 1e-8:
        raise NearSingularError(
            f"frozen operator has second eigenvalue {lam2:.3e}; solve abandoned",
            ritz=lam2,
        )
    phi = vecs[:, 0] / np.linalg.norm(vecs[:, 0])
    uvec = real_vector(prolong(gs.u, fine))
    rhs = gs.lam * uvec
    regularized = abs(lam1) < 1e-8
    # (rhs, phi)/lam1 degenerates with lam1; its limit is the state component
    c = float(phi @ uvec) if regularized else float(phi @ rhs) / lam1
    project = projector_against(phi)
    xperp, stats = pcg(
        apply_vec, project(rhs), weights, problem.a0,
        tol_dual=lin.tol, max_iter=lin.max_iter,
        project=project, on_indefinite=NearSingularError,
    )
    u_hat = normalized(field_from_real_vector(fine, xperp + c * phi))
    info = {"linsolve": stats, "ritz_lowest": lam1, "regularized": regularized}
    return _finalize("tg2a", problem, gs, fine, u_hat, info)


def two_grid_scheme2b(
    problem: Problem,
    gs: GroundState,
    fine: BasisSpec,
    lin: LinSolveConfig | None = None,
    eig: EigSolveConfig | None = None,
) -> Correction:
    """Bare-operator boundary value solve A u_f = lam u - mu g(u^2) u."""
    lin = lin or LinSolveConfig()
    eig = eig or EigSolveConfig()
    fock_vec, fock_op = _frozen(problem, gs, fine)
    u_f = prolong(gs.u, fine)
    rhs_field = gs.lam * u_f - (fock_op(u_f) - _bare_apply(problem, fine)(u_f))
    v_is_zero = float(np.max(np.abs(problem.V.coeffs), initial=0.0)) < 1e-14
    if v_is_zero:
        # kinetic diagonal: k = 0 entry is null, keep the coarse mean there
        rhs = rhs_field.coeffs.copy()
        diag = problem.a0 * fine.k2
        out = np.zeros_like(rhs)
        nz = diag > 0.0
        out[nz] = rhs[nz] / diag[nz]
        zero_idx, _, _ = fine._pairing
        out[zero_idx] = u_f.coeffs[zero_idx]
        u_hat = normalized(SpectralField(fine, out))
        info = {"diagonal": True}
    else:
        bare_vec = as_real_operator(fine, _bare_apply(problem, fine))
        weights = problem.a0 * (1.0 + fine.real_k2)
        vals, _ = lowest_eigenpairs(bare_vec, fine, 1, weights, eig)
        if vals[0] <= 1e-8:
            raise IndefiniteOperatorError(
                f"bare operator bottom eigenvalue {vals[0]:.3e} is not positive",
                ritz=float(vals[0]),
            )
        xvec, stats = pcg(
            bare_vec, real_vector(rhs_field), weights, problem.a0,
            tol_dual=lin.tol, max_iter=lin.max_iter,
            on_indefinite=IndefiniteOperatorError,
        )
        u_hat = normalized(field_from_real_vector(fine, xvec))
        info = {"linsolve": stats, "ritz_lowest": float(vals[0])}
    return _finalize("tg2b", problem, gs, fine, u_hat, info)


def _bare_apply(problem: Problem, basis: BasisSpec):
    op = PointwiseOperator(problem, problem.V, basis, kind="linear")
    return op


def perturbation_correction(problem: Problem, gs: GroundState, fine: BasisSpec) -> Correction:
    """Diagonal fine-mode update through the kinetic resolvent.

    tau_k = -r_k / (a0 |k|^2 - lam) on the new modes only; the coarse modes
    are left untouched.  Requires lam < a0 M^2 so the diagonal is invertible
    on every new mode.
    """
    M = gs.basis.M
    if gs.lam >= problem.a0 * M * M:
        raise DiagonalNotInvertibleError(
            f"lam = {gs.lam:.6f} is not below a0 M^2 = {problem.a0 * M * M:.6f}"
        )
    r = residual(problem, gs, fine)
    tau = np.zeros(fine.n_modes, dtype=np.complex128)
    denom = problem.a0 * fine.k2 - gs.lam
    fine_only = fine.k2 > M * M
    tau[fine_only] = -r.coeffs[fine_only] / denom[fine_only]
    w_hat = SpectralField(fine, tau)
    alpha, u_hat = normalize_correction(gs, w_hat, mode="affine")
    return _finalize("pert", problem, gs, fine, u_hat, {"transforms": 2},
                     w_hat=w_hat, alpha=alpha)


SCHEMES = {
    "newton": reconstructed_error,
    "tg1": two_grid_scheme1,
    "tg2a": two_grid_scheme2a,
    "tg2b": two_grid_scheme2b,
    "pert": perturbation_correction,
}


def run_scheme(name: str, problem: Problem, gs: GroundState, fine: BasisSpec,
               lin: LinSolveConfig | None = None,
               eig: EigSolveConfig | None = None) -> Correction:
    if name == "newton":
        return reconstructed_error(problem, gs, fine, lin)
    if name == "tg1":
        return two_grid_scheme1(problem, gs, fine, eig)
    if name == "tg2a":
        return two_grid_scheme2a(problem, gs, fine, lin, eig)
    if name == "tg2b":
        return two_grid_scheme2b(problem, gs, fine, lin, eig)
    if name == "pert":
        return perturbation_correction(problem, gs, fine)
    raise ValueError(f"unknown scheme {name!r}; expected one of {sorted(SCHEMES)}")
