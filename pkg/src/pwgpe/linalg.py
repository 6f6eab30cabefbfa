"""Iterative and dense kernels shared by the solver, corrector and estimator.

Everything here runs on the real coefficient packing of ``basis``: operators
are symmetric real maps, Sobolev weights are diagonal, and the natural
preconditioner is the diagonal a0 * (1 + |k|^2).  With that preconditioner
the CG inner product of the residual is exactly its squared dual norm over
a0, so convergence can be monitored in the norm the contracts are stated in.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.sparse.linalg import LinearOperator, lobpcg

from .basis import BasisSpec, SpectralField, field_from_real_vector, real_vector
from .errors import CoercivityViolatedError, NonconvergenceError


@dataclass(frozen=True)
class EigSolveConfig:
    tol: float = 1e-10
    max_iter: int = 4000
    dense_threshold: int = 600
    seed: int = 0


def as_real_operator(basis: BasisSpec, apply_field):
    """Wrap a SpectralField map as a map on real coefficient vectors."""

    def apply_vec(x: np.ndarray) -> np.ndarray:
        x = np.asarray(x).reshape(-1)
        return real_vector(apply_field(field_from_real_vector(basis, x)))

    return apply_vec


def dense_symmetric_matrix(apply_vec, n: int) -> np.ndarray:
    """Assemble the matrix column by column and symmetrize roundoff away."""
    cols = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        cols[:, j] = apply_vec(e)
        e[j] = 0.0
    return 0.5 * (cols + cols.T)


def lowest_eigenpairs(
    apply_vec,
    basis: BasisSpec,
    k: int,
    prec_weights: np.ndarray,
    cfg: EigSolveConfig,
    x0: np.ndarray | None = None,
):
    """k lowest eigenpairs of a symmetric operator on the real packing.

    Small problems are assembled densely; larger ones go through LOBPCG with
    the diagonal preconditioner, warm-started from ``x0`` when available.
    Returns (values ascending, vectors as columns).
    """
    n = basis.n_real
    k = min(k, n)
    if n <= cfg.dense_threshold:
        mat = dense_symmetric_matrix(apply_vec, n)
        vals, vecs = scipy.linalg.eigh(mat, subset_by_index=[0, k - 1])
        return vals, vecs
    rng = np.random.default_rng(cfg.seed)
    if x0 is None or x0.shape[1] < k:
        extra = k if x0 is None else k - x0.shape[1]
        rand = rng.standard_normal((n, extra)) / np.sqrt(prec_weights)[:, None]
        x0 = rand if x0 is None else np.hstack([x0, rand])
    op = LinearOperator((n, n), matvec=apply_vec, dtype=float)
    prec = LinearOperator(
        (n, n), matvec=lambda x: np.asarray(x).reshape(-1) / prec_weights, dtype=float
    )
    vals, vecs = lobpcg(
        op, x0[:, :k], M=prec, tol=cfg.tol, maxiter=cfg.max_iter, largest=False
    )
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]
    # verify: dual-norm residual per pair, retry once with a larger budget
    for attempt in range(2):
        res = _eig_residual(apply_vec, prec_weights, vals, vecs)
        if res <= max(cfg.tol * 10.0, 1e-9):
            return vals, vecs
        if attempt == 0:
            vals, vecs = lobpcg(
                op, vecs, M=prec, tol=cfg.tol, maxiter=4 * cfg.max_iter, largest=False
            )
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
    raise NonconvergenceError(
        f"eigensolve stalled with dual residual {res:.3e}", residual=res
    )


def _eig_residual(apply_vec, weights, vals, vecs) -> float:
    worst = 0.0
    for j in range(vecs.shape[1]):
        v = vecs[:, j] / np.linalg.norm(vecs[:, j])
        r = apply_vec(v) - vals[j] * v
        worst = max(worst, float(np.sqrt(np.sum(r * r / weights))))
    return worst


def pcg(
    apply_vec,
    b: np.ndarray,
    weights: np.ndarray,
    a0: float,
    tol_dual: float,
    max_iter: int,
    project=None,
    on_indefinite: type[Exception] = CoercivityViolatedError,
):
    """Preconditioned CG with optional subspace projection.

    weights is the diagonal preconditioner a0 * (1 + |k|^2) per real dof, so
    sqrt(a0 * r.z) with z = r / weights is the dual norm of the residual;
    iteration stops once it drops below ``tol_dual``.  A nonpositive
    curvature direction raises ``on_indefinite``.
    Returns (x, info dict).
    """
    def precondition(r):
        # the subspace projection must follow the diagonal solve, otherwise
        # the Krylov space drifts out of the complement and the recurrence
        # no longer tracks the true residual
        z = r / weights
        return project(z) if project is not None else z

    if project is not None:
        b = project(b)
    x = np.zeros_like(b)
    r = b.copy()
    z = precondition(r)
    rz = float(r @ z)
    p = z.copy()
    res = np.sqrt(a0 * rz)
    it = 0
    while res > tol_dual and it < max_iter:
        ap = apply_vec(p)
        if project is not None:
            ap = project(ap)
        pap = float(p @ ap)
        if pap <= 0.0:
            raise on_indefinite(
                f"nonpositive curvature {pap:.3e} encountered in the solve subspace"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if project is not None and it % 50 == 49:
            r = project(r)
        z = precondition(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
        res = np.sqrt(a0 * rz)
        it += 1
    if res > tol_dual:
        raise NonconvergenceError(
            f"linear solve stalled at dual residual {res:.3e} after {it} iterations",
            residual=res,
        )
    return x, {"iterations": it, "residual_dual": res}


def projector_against(u_vec: np.ndarray):
    """L2-orthogonal projector against a unit vector in the real packing."""
    u = u_vec / np.linalg.norm(u_vec)

    def project(x: np.ndarray) -> np.ndarray:
        return x - (u @ x) * u

    return project


def field_operator_matrix(basis: BasisSpec, apply_field) -> np.ndarray:
    """Dense real symmetric matrix of a field operator (small bases only)."""
    return dense_symmetric_matrix(as_real_operator(basis, apply_field), basis.n_real)
