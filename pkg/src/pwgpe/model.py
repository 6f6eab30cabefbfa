"""Problem definition and the operators of the constrained minimization.

The energy is

    E(v) = 1/2 * [ a0 * |grad v|^2 + int V v^2 ] + mu/2 * int G(v^2),

minimized over real fields with unit L2 norm.  Its differential at v is the
self-adjoint operator

    A_v = -a0 * Lap + V + mu * g(v^2),        g = G',

and the second-order (linearized) operator at a state (u, lam) is

    -a0 * Lap + V + mu * [2 g'(u^2) u^2 + g(u^2)] - lam.

All pointwise multiplications are evaluated on a grid large enough for the
projection onto the target ball to be exact when the nonlinearity is a
polynomial (the default cubic case p = 2).  For non-integer powers the grid
is the dealiased default and the remaining aliasing error is accepted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.fft import next_fast_len

from .basis import (
    BasisSpec,
    SpectralField,
    constant_field,
    eval_on_grid,
    is_real_field,
    l2_norm,
    make_basis,
    project_values,
    prolong,
    zero_field,
)
from .errors import BasisMismatchError, ConfigError, DegenerateFieldError


@dataclass(frozen=True)
class Nonlinearity:
    """Power-family nonlinearity G(t) = t^p / p with 1 < p < 3.

    p = 2 is the cubic case: g(t) = t, g'(t) = 1, and every product the
    solver needs is a polynomial of degree at most three in the field.
    """

    p: float = 2.0

    def __post_init__(self):
        if not 1.0 < self.p < 3.0:
            raise ConfigError(f"nonlinearity power must lie in (1, 3), got {self.p}")

    @property
    def is_cubic(self) -> bool:
        return self.p == 2.0

    def G(self, t: np.ndarray) -> np.ndarray:
        return np.power(t, self.p) / self.p

    def g(self, t: np.ndarray) -> np.ndarray:
        return np.power(t, self.p - 1.0)

    def glin(self, t: np.ndarray) -> np.ndarray:
        """2 g'(t) t + g(t), evaluated jointly so t = 0 stays finite for p < 2."""
        return (2.0 * self.p - 1.0) * np.power(t, self.p - 1.0)


@dataclass(frozen=True)
class Problem:
    """Diffusion constant a0, real potential V, nonlinearity strength mu."""

    d: int
    a0: float
    mu: float
    V: SpectralField
    nl: Nonlinearity = field(default_factory=Nonlinearity)

    def __post_init__(self):
        if self.d != self.V.basis.d:
            raise ConfigError("potential dimension does not match the problem")
        if not self.a0 > 0.0:
            raise ConfigError("diffusion coefficient a0 must be positive")
        if self.mu < 0.0:
            raise ConfigError("nonlinearity strength mu must be nonnegative")
        if not is_real_field(self.V):
            raise ConfigError("potential must be real-valued")


@dataclass(frozen=True)
class GroundState:
    """Converged discrete minimizer with its multiplier and diagnostics."""

    problem: Problem
    basis: BasisSpec
    u: SpectralField
    lam: float
    energy: float
    residual_dual_norm: float
    iterations: int
    converged: bool
    gap: float | None = None
    trace: tuple = ()


# ---------------------------------------------------------------------------
# potentials


def potential_zero(d: int) -> SpectralField:
    return zero_field(make_basis(d, 0))


def potential_cosine(d: int, terms, shift: float = 0.0) -> SpectralField:
    """shift + sum of amp * cos(k.x) terms; each term is (k, amp)."""
    kvecs = []
    for k, _ in terms:
        k = np.atleast_1d(np.asarray(k, dtype=np.int64))
        if k.shape != (d,):
            raise ConfigError(f"cosine wave vector {k.tolist()} does not have dimension {d}")
        kvecs.append(k)
    mv = max((int(np.ceil(np.sqrt(np.sum(k * k)))) for k in kvecs), default=0)
    basis = make_basis(d, mv)
    coeffs = np.zeros(basis.n_modes, dtype=np.complex128)
    lookup = {tuple(map(int, m)): i for i, m in enumerate(basis.modes)}
    scale = (2.0 * np.pi) ** (d / 2.0)
    coeffs[lookup[(0,) * d]] = shift * scale
    for k, (_, amp) in zip(kvecs, terms):
        kt = tuple(map(int, k))
        if all(c == 0 for c in kt):
            coeffs[lookup[kt]] += amp * scale
            continue
        coeffs[lookup[kt]] += 0.5 * amp * scale
        coeffs[lookup[tuple(-c for c in kt)]] += 0.5 * amp * scale
    return SpectralField(basis, coeffs)


def potential_rough(
    d: int,
    amplitude: float,
    sigma: float,
    k_knee: float,
    k_max: int,
    seed: int = 0,
    shift: float = 0.0,
) -> SpectralField:
    """Deterministic potential with a slowly decaying coefficient tail.

    Amplitudes are flat up to |k| ~ k_knee and then fall off like
    exp(-sigma * (sqrt(|k|) - sqrt(k_knee))); phases are drawn once from the
    seed.  The slow tail keeps discretization errors measurable over the
    cutoffs a desk-scale study can afford.
    """
    basis = make_basis(d, int(k_max))
    zero_idx, pos, neg = basis._pairing
    coeffs = np.zeros(basis.n_modes, dtype=np.complex128)
    rng = np.random.default_rng(seed)
    kabs = np.sqrt(basis.k2[pos])
    amp = amplitude * np.exp(-sigma * np.maximum(0.0, np.sqrt(kabs) - math.sqrt(k_knee)))
    phases = rng.uniform(0.0, 2.0 * np.pi, size=pos.size)
    scale = (2.0 * np.pi) ** (d / 2.0)
    coeffs[zero_idx] = shift * scale
    coeffs[pos] = 0.5 * amp * np.exp(1j * phases) * scale
    coeffs[neg] = np.conj(coeffs[pos])
    return SpectralField(basis, coeffs)


_POTENTIAL_KINDS = ("zero", "cosine", "rough", "coeff-file")


def make_potential(d: int, kind: str, params: dict | None = None) -> SpectralField:
    """Catalog entry point used by problem configs."""
    params = dict(params or {})
    if kind == "zero":
        return potential_zero(d)
    if kind == "cosine":
        terms = params.get("terms")
        if terms is None:
            terms = [([1] + [0] * (d - 1), 1.0)] if d == 1 else [
                (tuple(1 if j == i else 0 for j in range(d)), 1.0) for i in range(d)
            ]
        else:
            terms = [(t["k"], float(t["amp"])) for t in terms]
        return potential_cosine(d, terms, shift=float(params.get("shift", 0.0)))
    if kind == "rough":
        return potential_rough(
            d,
            amplitude=float(params.get("amplitude", 0.6)),
            sigma=float(params.get("sigma", 1.4)),
            k_knee=float(params.get("k_knee", 6.0)),
            k_max=int(params.get("k_max", 64)),
            seed=int(params.get("seed", 7)),
            shift=float(params.get("shift", 0.0)),
        )
    if kind == "coeff-file":
        from .basis import load_field

        path = params.get("path")
        if not path:
            raise ConfigError("potential kind 'coeff-file' requires a 'path'")
        return load_field(path)
    raise ConfigError(f"unknown potential kind {kind!r}; expected one of {_POTENTIAL_KINDS}")


# ---------------------------------------------------------------------------
# pointwise-operator machinery


def _quadrature_grid(problem: Problem, out_basis: BasisSpec, mult_bandwidth: int) -> int:
    """Grid length making products (multiplier * field -> out ball) exact.

    mult_bandwidth is the bandwidth of the non-potential multiplier factor;
    the potential contributes its own cutoff.  For non-polynomial
    nonlinearities the multiplier is not bandlimited and the dealiased
    default of the output basis is used instead.
    """
    mv = problem.V.basis.M
    need = max(mv, mult_bandwidth) + 2 * out_basis.M + 1
    # the grid must also hold every factor without wraparound collisions
    need = max(need, 2 * mv + 1, 2 * mult_bandwidth + 1)
    return next_fast_len(max(need, out_basis.N))


class PointwiseOperator:
    """v -> P_out[ (-a0 Lap + V + mu * f(u^2) - shift) v ] on a fixed basis.

    f is g for the frozen (Fock) operator and 2 g' t + g for the linearized
    one.  The multiplier is sampled once on the quadrature grid, so repeated
    applications cost two transforms each.
    """

    def __init__(self, problem: Problem, u: SpectralField, out_basis: BasisSpec,
                 kind: str = "fock", shift: float = 0.0):
        if kind not in ("fock", "linearized", "linear"):
            raise ValueError(f"unknown operator kind {kind!r}")
        if u.basis.d != out_basis.d:
            raise BasisMismatchError("state and output basis dimensions differ")
        self.problem = problem
        self.basis = out_basis
        self.shift = float(shift)
        nl = problem.nl
        if kind == "linear" or problem.mu == 0.0:
            bandwidth = 0
        elif nl.is_cubic:
            bandwidth = 2 * u.basis.M
        else:
            bandwidth = 2 * out_basis.M  # not bandlimited; dealiased default
        self.n_grid = _quadrature_grid(problem, out_basis, bandwidth)
        w = eval_on_grid(problem.V, self.n_grid).real
        if kind != "linear" and problem.mu != 0.0:
            t = eval_on_grid(u, self.n_grid).real ** 2
            w = w + problem.mu * (nl.g(t) if kind == "fock" else nl.glin(t))
        self.multiplier = w

    def __call__(self, v: SpectralField) -> SpectralField:
        if v.basis != self.basis:
            raise BasisMismatchError("operator applied to a field on another basis")
        vals = eval_on_grid(v, self.n_grid)
        out = project_values(self.multiplier * vals, self.basis)
        diag = self.problem.a0 * self.basis.k2 - self.shift
        return SpectralField(self.basis, out.coeffs + diag * v.coeffs)


def apply_fock(problem: Problem, u: SpectralField, v: SpectralField) -> SpectralField:
    """A_u v = -a0 Lap v + V v + mu g(u^2) v, projected onto v's basis."""
    if u.basis != v.basis:
        raise BasisMismatchError("apply_fock needs u and v on a common basis")
    return PointwiseOperator(problem, u, v.basis, kind="fock")(v)


def apply_linearized(problem: Problem, u: SpectralField, lam: float,
                     v: SpectralField) -> SpectralField:
    """(-a0 Lap + V + mu [2 g'(u^2) u^2 + g(u^2)] - lam) v."""
    if u.basis != v.basis:
        raise BasisMismatchError("apply_linearized needs u and v on a common basis")
    return PointwiseOperator(problem, u, v.basis, kind="linearized", shift=lam)(v)


# ---------------------------------------------------------------------------
# energy, Rayleigh quotient, residual


def _real_values(problem: Problem, v: SpectralField, n: int) -> np.ndarray:
    return eval_on_grid(v, n).real


def _energy_grid(problem: Problem, basis: BasisSpec) -> int:
    mv = problem.V.basis.M
    m = basis.M
    if problem.nl.is_cubic or problem.mu == 0.0:
        need = max(4 * m, mv + 2 * m) + 1
    else:
        need = max(4 * m + 2, mv + 2 * m + 1)
    return next_fast_len(max(need, 2 * m + 1, 2 * mv + 1))


def energy(problem: Problem, v: SpectralField) -> float:
    """E(v) = 1/2 a(v, v) + mu/2 * int G(v^2) by unaliased quadrature."""
    n = _energy_grid(problem, v.basis)
    vals = _real_values(problem, v, n)
    vv = vals * vals
    dx = (2.0 * np.pi / n) ** v.basis.d
    grad2 = float(np.sum(v.basis.k2 * np.abs(v.coeffs) ** 2))
    pot = float(np.sum(eval_on_grid(problem.V, n).real * vv)) * dx
    nonlin = float(np.sum(problem.nl.G(vv))) * dx if problem.mu else 0.0
    return 0.5 * (problem.a0 * grad2 + pot) + 0.5 * problem.mu * nonlin


def rayleigh(problem: Problem, v: SpectralField) -> float:
    """<A_v v, v> / |v|^2, the multiplier functional of the eigenproblem."""
    den = l2_norm(v) ** 2
    if den <= 0.0:
        raise DegenerateFieldError("Rayleigh quotient of the zero field")
    n = _energy_grid(problem, v.basis)
    vals = _real_values(problem, v, n)
    vv = vals * vals
    dx = (2.0 * np.pi / n) ** v.basis.d
    grad2 = float(np.sum(v.basis.k2 * np.abs(v.coeffs) ** 2))
    pot = float(np.sum(eval_on_grid(problem.V, n).real * vv)) * dx
    nonlin = float(np.sum(problem.nl.g(vv) * vv)) * dx if problem.mu else 0.0
    return (problem.a0 * grad2 + pot + problem.mu * nonlin) / den


def residual(problem: Problem, gs: GroundState, fine: BasisSpec) -> SpectralField:
    """(A_u - lam) u represented on the fine ball.

    By construction its restriction to the solve ball vanishes within the
    solver tolerance, so the interesting content sits on the new modes.
    """
    if fine.M < gs.basis.M:
        raise BasisMismatchError("residual basis must contain the solve basis")
    u_f = prolong(gs.u, fine)
    op = PointwiseOperator(problem, gs.u, fine, kind="fock", shift=gs.lam)
    return op(u_f)


def normalized(v: SpectralField) -> SpectralField:
    nrm = l2_norm(v)
    if nrm <= 0.0:
        raise DegenerateFieldError("cannot normalize the zero field")
    return v * (1.0 / nrm)


def sign_aligned(v: SpectralField, ref: SpectralField) -> SpectralField:
    """Flip v if its L2 projection on ref is negative."""
    from .basis import l2_inner

    return -v if l2_inner(v, ref) < 0.0 else v


def constant_ground_state(problem: Problem, basis: BasisSpec) -> SpectralField:
    """Unit-norm constant field, the exact minimizer when V is constant."""
    return normalized(constant_field(basis, 1.0))
