"""Planewave fields on the periodic box Omega = (0, 2*pi)^d.

A field is a trigonometric polynomial  v = sum_k c_k e_k  over integer wave
vectors inside the Euclidean ball |k| <= M, with orthonormal planewaves

    e_k(x) = (2*pi)^(-d/2) * exp(i k.x).

With this normalization the L2 inner product of two fields is the plain
coefficient dot product (Parseval), and the H^s inner products are the
(1 + |k|^2)^s weighted ones.  Real-valued fields have conjugate-symmetric
coefficients, c(-k) = conj(c(k)).

The collocation grid is uniform with N points per dimension; N >= 4M + 2 so
that cubic products of cutoff-M fields are projected onto the ball without
aliasing.  Grid transforms are plain FFTs with scatter/gather between the
mode list and the FFT cube.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.fft import fftn, ifftn, next_fast_len

from .errors import (
    AliasingError,
    BasisMismatchError,
    BasisTooLargeError,
    DegenerateProjectorError,
)

# Memory budget: FFT cubes and mode lists beyond this are refused.
MAX_GRID_POINTS = 1 << 24
MAX_MODES = 1 << 21


def _mode_ball(d: int, M: int) -> np.ndarray:
    """All k in Z^d with |k| <= M, lexicographically sorted, shape (n, d)."""
    line = np.arange(-M, M + 1, dtype=np.int64)
    grids = np.meshgrid(*([line] * d), indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    pts = pts[np.sum(pts * pts, axis=1) <= M * M]
    order = np.lexsort(tuple(pts[:, i] for i in reversed(range(d))))
    return np.ascontiguousarray(pts[order])


@dataclass(frozen=True, eq=False)
class BasisSpec:
    """Cutoff-ball planewave basis: dimension d, cutoff M, grid length N."""

    d: int
    M: int
    N: int
    modes: np.ndarray

    def __eq__(self, other):
        return (
            isinstance(other, BasisSpec)
            and (self.d, self.M, self.N) == (other.d, other.M, other.N)
        )

    def __hash__(self):
        return hash((self.d, self.M, self.N))

    def __repr__(self):
        return f"BasisSpec(d={self.d}, M={self.M}, N={self.N}, modes={self.n_modes})"

    @property
    def n_modes(self) -> int:
        return self.modes.shape[0]

    @cached_property
    def k2(self) -> np.ndarray:
        """|k|^2 per mode."""
        return np.sum(self.modes.astype(np.float64) ** 2, axis=1)

    @cached_property
    def flat(self) -> np.ndarray:
        """Raveled index of each mode in the (N,)*d FFT cube."""
        return _flat_indices(self.modes, self.d, self.N)

    @cached_property
    def _pairing(self):
        """Index structure of the +/-k pairing used by the real packing.

        Returns (zero_idx, pos_idx, neg_idx) where pos_idx lists the modes
        whose first nonzero component is positive and neg_idx[j] is the index
        of -modes[pos_idx[j]].
        """
        modes = self.modes
        n = modes.shape[0]
        key_of = {tuple(int(c) for c in modes[i]): i for i in range(n)}
        zero_idx = key_of[(0,) * self.d]
        pos, neg = [], []
        for i in range(n):
            k = modes[i]
            nz = k[k != 0]
            if nz.size and nz[0] > 0:
                pos.append(i)
                neg.append(key_of[tuple(int(-c) for c in k)])
        return zero_idx, np.asarray(pos, dtype=np.intp), np.asarray(neg, dtype=np.intp)

    @cached_property
    def real_k2(self) -> np.ndarray:
        """|k|^2 per real degree of freedom (zero mode first, then pairs)."""
        zero_idx, pos, _ = self._pairing
        return np.concatenate(([self.k2[zero_idx]], np.repeat(self.k2[pos], 2)))

    @property
    def n_real(self) -> int:
        return self.n_modes


def _flat_indices(modes: np.ndarray, d: int, n: int) -> np.ndarray:
    if 2 * int(np.max(np.abs(modes), initial=0)) + 1 > n:
        raise AliasingError(f"grid of length {n} cannot hold modes up to {np.max(np.abs(modes))}")
    wrapped = np.mod(modes, n)
    flat = wrapped[:, 0].astype(np.intp)
    for i in range(1, d):
        flat = flat * n + wrapped[:, i]
    return flat


def make_basis(d: int, M: int) -> BasisSpec:
    """Basis with modes |k| <= M and the smallest fast grid length N >= 4M + 2."""
    if d not in (1, 2, 3):
        raise BasisTooLargeError(f"dimension must be 1, 2 or 3, got {d}")
    if M < 0 or int(M) != M:
        raise BasisTooLargeError(f"cutoff must be a nonnegative integer, got {M}")
    M = int(M)
    N = next_fast_len(4 * M + 2)
    if N**d > MAX_GRID_POINTS:
        raise BasisTooLargeError(f"grid {N}^{d} exceeds the memory budget")
    modes = _mode_ball(d, M)
    if modes.shape[0] > MAX_MODES:
        raise BasisTooLargeError(f"{modes.shape[0]} modes exceed the budget")
    modes.setflags(write=False)
    return BasisSpec(d=d, M=M, N=N, modes=modes)


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Coefficients of a field on a BasisSpec, one complex amplitude per mode."""

    basis: BasisSpec
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=np.complex128)
        if c.shape != (self.basis.n_modes,):
            raise BasisMismatchError(
                f"expected {self.basis.n_modes} coefficients, got shape {c.shape}"
            )
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __add__(self, other):
        _same_basis(self, other)
        return SpectralField(self.basis, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same_basis(self, other)
        return SpectralField(self.basis, self.coeffs - other.coeffs)

    def __mul__(self, scalar):
        return SpectralField(self.basis, self.coeffs * scalar)

    __rmul__ = __mul__

    def __neg__(self):
        return SpectralField(self.basis, -self.coeffs)


@dataclass(frozen=True, eq=False)
class GridField:
    """Samples of a field on the uniform N^d collocation grid of a basis."""

    basis: BasisSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values)
        shape = (self.basis.N,) * self.basis.d
        if v.shape != shape:
            raise BasisMismatchError(f"expected grid shape {shape}, got {v.shape}")
        object.__setattr__(self, "values", v)


def _same_basis(v: SpectralField, w: SpectralField):
    if v.basis != w.basis:
        raise BasisMismatchError(f"fields live on {v.basis} and {w.basis}")


def zero_field(basis: BasisSpec) -> SpectralField:
    return SpectralField(basis, np.zeros(basis.n_modes, dtype=np.complex128))


def constant_field(basis: BasisSpec, mean_value: float = 1.0) -> SpectralField:
    """Field identically equal to mean_value (coefficient only at k = 0)."""
    c = np.zeros(basis.n_modes, dtype=np.complex128)
    zero_idx, _, _ = basis._pairing
    c[zero_idx] = mean_value * (2.0 * np.pi) ** (basis.d / 2.0)
    return SpectralField(basis, c)


# ---------------------------------------------------------------------------
# grid transforms


def eval_on_grid(v: SpectralField, n: int) -> np.ndarray:
    """Point values of v on the uniform n^d grid (complex array)."""
    d = v.basis.d
    flat = n if n == v.basis.N else None
    idx = v.basis.flat if flat else _flat_indices(v.basis.modes, d, n)
    cube = np.zeros((n,) * d, dtype=np.complex128)
    cube.ravel()[idx] = v.coeffs
    return ifftn(cube, norm="forward") * (2.0 * np.pi) ** (-d / 2.0)


def project_values(values: np.ndarray, basis: BasisSpec) -> SpectralField:
    """L2 projection of grid samples onto the modes of ``basis``.

    The grid is the one the values are sampled on; its length per dimension
    must be at least 2M + 1 for the target cutoff.
    """
    d = basis.d
    n = values.shape[0]
    idx = basis.flat if n == basis.N else _flat_indices(basis.modes, d, n)
    cube = fftn(np.asarray(values, dtype=np.complex128), norm="forward")
    coeffs = cube.ravel()[idx] * (2.0 * np.pi) ** (d / 2.0)
    return SpectralField(basis, coeffs)


def to_grid(v: SpectralField) -> GridField:
    """Evaluate the trigonometric polynomial at the basis collocation nodes."""
    return GridField(v.basis, eval_on_grid(v, v.basis.N))


def from_grid(g: GridField, M: int) -> SpectralField:
    """Project grid samples onto the cutoff-M ball (grid must resolve it)."""
    if g.basis.N < 2 * M + 1:
        raise AliasingError(f"grid length {g.basis.N} cannot resolve cutoff {M}")
    target = make_basis(g.basis.d, M)
    idx = _flat_indices(target.modes, target.d, g.basis.N)
    cube = fftn(np.asarray(g.values, dtype=np.complex128), norm="forward")
    coeffs = cube.ravel()[idx] * (2.0 * np.pi) ** (target.d / 2.0)
    return SpectralField(target, coeffs)


# ---------------------------------------------------------------------------
# inner products and norms


def sobolev_inner(v: SpectralField, w: SpectralField, s: float) -> float:
    """(v, w) with weight (1 + |k|^2)^s; s = 0 is the L2 product."""
    _same_basis(v, w)
    weights = (1.0 + v.basis.k2) ** s
    return float(np.real(np.sum(weights * v.coeffs * np.conj(w.coeffs))))


def h_norm(v: SpectralField, s: float = 0.0) -> float:
    weights = (1.0 + v.basis.k2) ** s
    return float(np.sqrt(np.sum(weights * np.abs(v.coeffs) ** 2)))


def l2_inner(v: SpectralField, w: SpectralField) -> float:
    return sobolev_inner(v, w, 0.0)


def l2_norm(v: SpectralField) -> float:
    return h_norm(v, 0.0)


def is_real_field(v: SpectralField, tol: float = 1e-10) -> bool:
    """Conjugate symmetry check: c(-k) = conj(c(k)) up to tol (relative)."""
    zero_idx, pos, neg = v.basis._pairing
    scale = max(1.0, float(np.max(np.abs(v.coeffs), initial=0.0)))
    if abs(v.coeffs[zero_idx].imag) > tol * scale:
        return False
    if pos.size == 0:
        return True
    return bool(
        np.max(np.abs(v.coeffs[neg] - np.conj(v.coeffs[pos]))) <= tol * scale
    )


# ---------------------------------------------------------------------------
# embedding between nested cutoff balls


def _encode(modes: np.ndarray, M: int) -> np.ndarray:
    base = np.int64(2 * M + 1)
    key = (modes[:, 0] + M).astype(np.int64)
    for i in range(1, modes.shape[1]):
        key = key * base + (modes[:, i] + M)
    return key


def embedding_indices(coarse: BasisSpec, fine: BasisSpec) -> np.ndarray:
    """Position of each coarse mode inside the fine mode list."""
    if coarse.d != fine.d:
        raise BasisMismatchError("dimension mismatch between bases")
    if coarse.M > fine.M:
        raise BasisMismatchError("coarse cutoff exceeds fine cutoff")
    fine_keys = _encode(fine.modes, fine.M)
    coarse_keys = _encode(coarse.modes, fine.M)
    pos = np.searchsorted(fine_keys, coarse_keys)
    return pos.astype(np.intp)


def prolong(v: SpectralField, fine: BasisSpec) -> SpectralField:
    """Zero-padding embedding into a larger ball (isometry in every H^s)."""
    if fine == v.basis:
        return v
    idx = embedding_indices(v.basis, fine)
    coeffs = np.zeros(fine.n_modes, dtype=np.complex128)
    coeffs[idx] = v.coeffs
    return SpectralField(fine, coeffs)


def restrict(v: SpectralField, coarse: BasisSpec) -> SpectralField:
    """Truncation onto a smaller ball (L2 projection, contraction in H^s)."""
    if coarse == v.basis:
        return v
    idx = embedding_indices(coarse, v.basis)
    return SpectralField(coarse, v.coeffs[idx])


def project_orthogonal(v: SpectralField, u: SpectralField) -> SpectralField:
    """v minus its L2 component along u."""
    _same_basis(v, u)
    uu = float(np.sum(np.abs(u.coeffs) ** 2))
    if uu < 1e-28:
        raise DegenerateProjectorError("cannot project against a zero field")
    c = np.sum(v.coeffs * np.conj(u.coeffs)) / uu
    return SpectralField(v.basis, v.coeffs - c * u.coeffs)


# ---------------------------------------------------------------------------
# real packing: real fields <-> real coefficient vectors
#
# Real fields are parameterized by one real amplitude for k = 0 and a
# (cos, sin) amplitude pair per canonical +/-k pair.  The packing is an L2
# isometry and keeps every Sobolev weight diagonal, so iterative solvers can
# run on plain real vectors.


def real_vector(v: SpectralField) -> np.ndarray:
    zero_idx, pos, _ = v.basis._pairing
    out = np.empty(v.basis.n_real)
    out[0] = v.coeffs[zero_idx].real
    cp = v.coeffs[pos]
    out[1::2] = np.sqrt(2.0) * cp.real
    out[2::2] = -np.sqrt(2.0) * cp.imag
    return out


def field_from_real_vector(basis: BasisSpec, vec: np.ndarray) -> SpectralField:
    zero_idx, pos, neg = basis._pairing
    coeffs = np.zeros(basis.n_modes, dtype=np.complex128)
    coeffs[zero_idx] = vec[0]
    cp = (vec[1::2] - 1j * vec[2::2]) / np.sqrt(2.0)
    coeffs[pos] = cp
    coeffs[neg] = np.conj(cp)
    return SpectralField(basis, coeffs)


# ---------------------------------------------------------------------------
# serialization: flat JSON record with deterministic mode order


def field_to_record(v: SpectralField) -> dict:
    return {
        "d": v.basis.d,
        "M": v.basis.M,
        "coeffs": [
            [*map(int, k), float(c.real), float(c.imag)]
            for k, c in zip(v.basis.modes, v.coeffs)
        ],
    }


def field_from_record(rec: dict) -> SpectralField:
    basis = make_basis(int(rec["d"]), int(rec["M"]))
    rows = rec["coeffs"]
    if len(rows) != basis.n_modes:
        raise BasisMismatchError("coefficient record does not match the cutoff ball")
    ks = np.asarray([r[: basis.d] for r in rows], dtype=np.int64)
    if not np.array_equal(ks, basis.modes):
        raise BasisMismatchError("coefficient record has unexpected mode order")
    coeffs = np.asarray([complex(r[-2], r[-1]) for r in rows])
    return SpectralField(basis, coeffs)


def save_field(v: SpectralField, path) -> None:
    with open(path, "w") as f:
        json.dump(field_to_record(v), f)


def load_field(path) -> SpectralField:
    with open(path) as f:
        return field_from_record(json.load(f))
