"""Dense brute-force reference path for tiny bases.

Everything is assembled from direct coefficient convolutions, never from
grid products or FFTs, so agreement with the transform-based solver is a
genuine cross-check of both paths.  The nonlinearity must be the cubic one
(p = 2): only then is every needed term a finite convolution.

The solve itself is damped fixed-point iteration on the dense frozen matrix
followed by a bordered Newton iteration on the sphere, pushed to an
eigenvalue residual of 1e-12 in the dual norm.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg

from .basis import (
    BasisSpec,
    SpectralField,
    field_from_real_vector,
    make_basis,
    prolong,
    real_vector,
)
from .errors import BasisTooLargeError, CertificateUnsupportedError, NonconvergenceError
from .model import GroundState, Problem, energy

ORACLE_MODE_CAP = 200


def _check(problem: Problem, basis: BasisSpec):
    if not problem.nl.is_cubic:
        raise CertificateUnsupportedError(
            "the dense oracle supports only the cubic nonlinearity (p = 2)"
        )
    if basis.n_modes > ORACLE_MODE_CAP:
        raise BasisTooLargeError(
            f"{basis.n_modes} modes exceed the dense oracle cap of {ORACLE_MODE_CAP}"
        )


class _ConvTable:
    """Index map for coefficient convolutions between cutoff balls."""

    def __init__(self, src_a: BasisSpec, src_b: BasisSpec, target: BasisSpec):
        d = target.d
        lookup = {tuple(map(int, m)): i for i, m in enumerate(target.modes)}
        na, nb = src_a.n_modes, src_b.n_modes
        idx = np.full((na, nb), -1, dtype=np.intp)
        for i, ka in enumerate(src_a.modes):
            for j, kb in enumerate(src_b.modes):
                t = lookup.get(tuple(int(a + b) for a, b in zip(ka, kb)))
                if t is not None:
                    idx[i, j] = t
        self.idx = idx
        self.n_target = target.n_modes
        self.scale = (2.0 * np.pi) ** (-d / 2.0)

    def convolve(self, ca: np.ndarray, cb: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n_target, dtype=np.complex128)
        contrib = np.outer(ca, cb).ravel()
        flat = self.idx.ravel()
        mask = flat >= 0
        np.add.at(out, flat[mask], contrib[mask])
        return out * self.scale


class _DenseModel:
    """Dense real matrices of the operators on a small cutoff ball."""

    def __init__(self, problem: Problem, basis: BasisSpec):
        _check(problem, basis)
        self.problem = problem
        self.basis = basis
        self.double = make_basis(basis.d, 2 * basis.M)
        self.conv_uu = _ConvTable(basis, basis, self.double)      # u*u -> 2M ball
        self.conv_mv = _ConvTable(self.double, basis, basis)      # (u^2)*v -> M ball
        self.conv_vv = _ConvTable(problem.V.basis, basis, basis)  # V*v -> M ball
        self.kin = np.diag(problem.a0 * basis.real_k2)
        self.vmat = self._multiplication_matrix(
            lambda c: self.conv_vv.convolve(problem.V.coeffs, c)
        )

    def _multiplication_matrix(self, conv_apply) -> np.ndarray:
        n = self.basis.n_real
        mat = np.empty((n, n))
        e = np.zeros(n)
        for j in range(n):
            e[j] = 1.0
            f = field_from_real_vector(self.basis, e)
            mat[:, j] = real_vector(SpectralField(self.basis, conv_apply(f.coeffs)))
            e[j] = 0.0
        return 0.5 * (mat + mat.T)

    def density_coeffs(self, uvec: np.ndarray) -> np.ndarray:
        c = field_from_real_vector(self.basis, uvec).coeffs
        return self.conv_uu.convolve(c, c)

    def density_matrix(self, dens: np.ndarray) -> np.ndarray:
        return self._multiplication_matrix(lambda c: self.conv_mv.convolve(dens, c))

    def fock_matrix(self, uvec: np.ndarray) -> np.ndarray:
        mat = self.kin + self.vmat
        if self.problem.mu:
            mat = mat + self.problem.mu * self.density_matrix(self.density_coeffs(uvec))
        return mat

    def hessian_matrix(self, uvec: np.ndarray) -> np.ndarray:
        mat = self.kin + self.vmat
        if self.problem.mu:
            mat = mat + 3.0 * self.problem.mu * self.density_matrix(self.density_coeffs(uvec))
        return mat

    def energy(self, uvec: np.ndarray) -> float:
        quad = 0.5 * float(uvec @ (self.kin + self.vmat) @ uvec)
        dens = self.density_coeffs(uvec)
        return quad + 0.25 * self.problem.mu * float(np.sum(np.abs(dens) ** 2))

    def dual_residual(self, uvec: np.ndarray, lam: float, fock=None) -> float:
        fock = self.fock_matrix(uvec) if fock is None else fock
        r = fock @ uvec - lam * uvec
        return float(np.sqrt(np.sum(r * r / (1.0 + self.basis.real_k2))))


def oracle_ground_state(
    problem: Problem,
    M: int,
    tol: float = 1e-12,
    max_iter: int = 200,
) -> GroundState:
    """Dense constrained minimization on the cutoff-M ball."""
    basis = make_basis(problem.d, M)
    dm = _DenseModel(problem, basis)
    n = basis.n_real
    u = np.zeros(n)
    u[0] = 1.0
    lam = 0.0
    # damped fixed-point phase on the dense frozen matrix
    for _ in range(max_iter):
        fock = dm.fock_matrix(u)
        lam = float(u @ fock @ u)
        if dm.dual_residual(u, lam, fock) < 1e-6:
            break
        vals, vecs = scipy.linalg.eigh(fock, subset_by_index=[0, 0])
        phi = vecs[:, 0]
        if phi @ u < 0:
            phi = -phi
        u = 0.4 * u + 0.6 * phi
        u /= np.linalg.norm(u)
    # bordered Newton phase
    res = np.inf
    for _ in range(40):
        fock = dm.fock_matrix(u)
        lam = float(u @ fock @ u)
        res = dm.dual_residual(u, lam, fock)
        if res <= tol:
            break
        hess = dm.hessian_matrix(u)
        jac = np.zeros((n + 1, n + 1))
        jac[:n, :n] = hess - lam * np.eye(n)
        jac[:n, n] = -u
        jac[n, :n] = 2.0 * u
        rhs = np.concatenate([-(fock @ u - lam * u), [0.0]])
        step = np.linalg.solve(jac, rhs)
        u = u + step[:n]
        u /= np.linalg.norm(u)
    if res > tol:
        raise NonconvergenceError(
            f"dense oracle stalled at dual residual {res:.3e}", residual=res
        )
    if u[0] < 0:
        u = -u
    fock = dm.fock_matrix(u)
    lam = float(u @ fock @ u)
    field = field_from_real_vector(basis, u)
    return GroundState(
        problem=problem,
        basis=basis,
        u=field,
        lam=lam,
        energy=dm.energy(u),
        residual_dual_norm=dm.dual_residual(u, lam, fock),
        iterations=0,
        converged=True,
        gap=None,
    )


def oracle_spectrum(problem: Problem, u: SpectralField, M: int, count: int = 6) -> np.ndarray:
    """Lowest eigenvalues of the dense frozen operator at state u."""
    basis = make_basis(problem.d, M)
    dm = _DenseModel(problem, basis)
    uvec = real_vector(prolong(u, basis)) if u.basis.M <= M else None
    if uvec is None:
        raise BasisTooLargeError("state cutoff exceeds the requested oracle ball")
    fock = dm.fock_matrix(uvec)
    count = min(count, basis.n_real)
    vals = scipy.linalg.eigh(fock, subset_by_index=[0, count - 1], eigvals_only=True)
    return vals


def oracle_newton_correction(problem: Problem, gs: GroundState, fine_M: int) -> SpectralField:
    """Dense solve of the linearized correction equation on the fine ball.

    Returns the correction orthogonal to the coarse state, obtained from the
    saddle (Lagrange) formulation with a direct factorization.
    """
    fine = make_basis(problem.d, fine_M)
    dm = _DenseModel(problem, fine)
    uvec = real_vector(prolong(gs.u, fine))
    fock = dm.fock_matrix(uvec)
    hess = dm.hessian_matrix(uvec)
    n = fine.n_real
    rhs_top = -(fock @ uvec - gs.lam * uvec)
    kkt = np.zeros((n + 1, n + 1))
    kkt[:n, :n] = hess - gs.lam * np.eye(n)
    kkt[:n, n] = uvec
    kkt[n, :n] = uvec
    sol = np.linalg.solve(kkt, np.concatenate([rhs_top, [0.0]]))
    w = sol[:n]
    w -= (uvec @ w) * uvec / float(uvec @ uvec)
    return field_from_real_vector(fine, w)


def oracle_energy(problem: Problem, v: SpectralField) -> float:
    """Energy through the dense convolution path (cross-check of quadrature)."""
    dm = _DenseModel(problem, v.basis)
    return dm.energy(real_vector(v))


_ = energy  # re-exported convenience for callers comparing both paths
