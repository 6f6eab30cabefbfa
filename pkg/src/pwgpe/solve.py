"""Ground-state solver for the discrete constrained minimization.

Two outer methods are provided.  ``scf`` freezes the nonlinear coefficient,
computes the lowest eigenpair of the frozen operator and mixes it into the
iterate with damping beta.  ``gradient_flow`` takes preconditioned projected
gradient steps with backtracking, which makes the energy monotone by
construction.  Both stop when the dual norm of the eigenvalue residual on
the solve ball drops below the configured tolerance.
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
    make_basis,
    real_vector,
)
from .errors import (
    ConfigError,
    DegenerateGroundStateError,
    NonconvergenceError,
    StagnationError,
)
from .linalg import EigSolveConfig, as_real_operator, lowest_eigenpairs
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
class SolverConfig:
    method: str = "scf"
    tol_residual: float = 1e-10
    max_outer: int = 200
    damping: float = 0.5
    flow_step: float = 1.0
    inner_tol: float = 1e-11
    inner_max_iter: int = 4000
    dense_threshold: int = 600
    seed: int = 0
    fine_factor: int = 4

    def __post_init__(self):
        if self.method not in ("scf", "gradient_flow"):
            raise ConfigError(f"unknown solver method {self.method!r}")
        if not self.tol_residual > 0.0:
            raise ConfigError("tol_residual must be positive")
        if not 0.0 < self.damping <= 1.0:
            raise ConfigError("damping must lie in (0, 1]")

    def eig_config(self) -> EigSolveConfig:
        return EigSolveConfig(
            tol=self.inner_tol,
            max_iter=self.inner_max_iter,
            dense_threshold=self.dense_threshold,
            seed=self.seed,
        )


def initial_guess(problem: Problem, basis: BasisSpec, seed: int) -> SpectralField:
    """Normalized constant plus a seeded 1e-2 kick on the low modes."""
    rng = np.random.default_rng(seed)
    vec = np.zeros(basis.n_real)
    vec[0] = 1.0
    low = basis.real_k2 <= min(2.0, float(basis.M)) ** 2
    low[0] = False
    vec[low] += 1e-2 * rng.standard_normal(int(np.sum(low)))
    u = normalized(field_from_real_vector(basis, vec))
    return _fix_sign(u)


def _fix_sign(u: SpectralField) -> SpectralField:
    zero_idx, _, _ = u.basis._pairing
    return -u if u.coeffs[zero_idx].real < 0.0 else u


def _residual_field(problem: Problem, u: SpectralField, lam: float) -> SpectralField:
    op = PointwiseOperator(problem, u, u.basis, kind="fock", shift=lam)
    return op(u)


def _frozen_lowest(problem, u, cfg: SolverConfig, k=2, x0=None):
    op = PointwiseOperator(problem, u, u.basis, kind="fock")
    apply_vec = as_real_operator(u.basis, op)
    weights = problem.a0 * (1.0 + u.basis.real_k2)
    return lowest_eigenpairs(apply_vec, u.basis, k, weights, cfg.eig_config(), x0=x0)


def scf_step(problem: Problem, u: SpectralField, cfg: SolverConfig):
    """One damped self-consistent step; returns (u_next, lambda_next)."""
    u_next, lam, _ = _scf_step_inner(problem, u, cfg, x0=None)
    return u_next, lam


def _scf_step_inner(problem, u, cfg, x0):
    n = u.basis.n_real
    k = 2 if n >= 2 else 1
    vals, vecs = _frozen_lowest(problem, u, cfg, k=k, x0=x0)
    if k == 2 and vals[1] - vals[0] < 1e-10:
        raise DegenerateGroundStateError(
            f"frozen-operator gap {vals[1] - vals[0]:.3e} is numerically zero"
        )
    phi = normalized(field_from_real_vector(u.basis, vecs[:, 0]))
    if l2_inner(phi, u) < 0.0:
        phi = -phi
        vecs = vecs.copy()
        vecs[:, 0] = -vecs[:, 0]
    mixed = (1.0 - cfg.damping) * u + cfg.damping * phi
    u_next = _fix_sign(normalized(mixed))
    lam_next = rayleigh(problem, u_next)
    return u_next, lam_next, vecs


def gradient_flow_step(problem: Problem, u: SpectralField, cfg: SolverConfig) -> SpectralField:
    """Projected preconditioned descent step with energy backtracking."""
    basis = u.basis
    lam = rayleigh(problem, u)
    grad = _residual_field(problem, u, lam)
    gvec = real_vector(grad)
    weights = problem.a0 * (1.0 + basis.real_k2)
    dvec = gvec / weights
    uvec = real_vector(u)
    un = uvec / np.linalg.norm(uvec)
    dvec -= (un @ dvec) * un
    e0 = energy(problem, u)
    slack = 1e-14 * (1.0 + abs(e0))
    tau = cfg.flow_step
    while tau >= 1e-12:
        trial_vec = uvec - tau * dvec
        trial = _fix_sign(normalized(field_from_real_vector(basis, trial_vec)))
        if energy(problem, trial) <= e0 + slack:
            return trial
        tau *= 0.5
    raise StagnationError(
        "gradient flow step underflow; energy no longer decreases", residual=None
    )


def solve_ground_state(
    problem: Problem,
    basis: BasisSpec,
    cfg: SolverConfig | None = None,
    fine_basis: BasisSpec | None = None,
) -> GroundState:
    """Minimize on the cutoff ball and return the converged state.

    The returned state has unit norm, nonnegative mean, lambda equal to its
    Rayleigh quotient, and the dual residual norm measured both on the solve
    ball (convergence criterion) and on a finer ball (reported).
    """
    cfg = cfg or SolverConfig()
    u = initial_guess(problem, basis, cfg.seed)
    trace = []
    x0 = None
    res = np.inf
    converged = False
    iterations = 0
    for it in range(cfg.max_outer):
        lam = rayleigh(problem, u)
        r = _residual_field(problem, u, lam)
        res = h_norm(r, -1.0)
        trace.append((it, energy(problem, u), res, lam))
        iterations = it
        if res <= cfg.tol_residual:
            converged = True
            break
        if cfg.method == "scf":
            u, _, vecs = _scf_step_inner(problem, u, cfg, x0=x0)
            x0 = vecs
        else:
            u = gradient_flow_step(problem, u, cfg)
    if not converged:
        raise NonconvergenceError(
            f"no convergence after {cfg.max_outer} outer iterations "
            f"(last dual residual {res:.3e})",
            residual=res,
        )
    lam = rayleigh(problem, u)
    gap = None
    if basis.n_real >= 2:
        vals, _ = _frozen_lowest(problem, u, cfg, k=2, x0=x0)
        gap = float(vals[1] - vals[0])
        if gap <= 1e-10:
            raise DegenerateGroundStateError(f"ground-state gap {gap:.3e} vanishes")
    if fine_basis is None:
        fine_basis = make_basis(basis.d, max(cfg.fine_factor * basis.M, basis.M + 1))
    gs = GroundState(
        problem=problem,
        basis=basis,
        u=u,
        lam=lam,
        energy=energy(problem, u),
        residual_dual_norm=0.0,
        iterations=iterations,
        converged=True,
        gap=gap,
        trace=tuple(trace),
    )
    fine_res = h_norm(residual(problem, gs, fine_basis), -1.0)
    object.__setattr__(gs, "residual_dual_norm", fine_res)
    return gs
