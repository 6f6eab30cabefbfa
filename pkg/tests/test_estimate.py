import math

import numpy as np
import pytest

from pwgpe.basis import SpectralField, h_norm, make_basis, prolong
from pwgpe.errors import CertificateUnsupportedError
from pwgpe.estimate import (
    C_INF,
    EstimateReport,
    energy_bounds,
    kantorovich_certificate,
    residual_dual_norm,
    spectral_gap,
)
from pwgpe.model import Nonlinearity, Problem, make_potential
from pwgpe.oracle import oracle_spectrum
from pwgpe.postprocess import reconstructed_error
from pwgpe.solve import SolverConfig, solve_ground_state

INV_2PI = 1.0 / (2.0 * np.pi)


@pytest.fixture(scope="module")
def flat_gs(flat_problem):
    return solve_ground_state(flat_problem, make_basis(1, 4),
                              SolverConfig(tol_residual=1e-12))


@pytest.fixture(scope="module")
def rough_gs(rough_problem):
    return solve_ground_state(rough_problem, make_basis(1, 12),
                              SolverConfig(tol_residual=1e-11))


def test_sup_norm_embedding_constant_matches_the_series():
    series = sum(1.0 / (1.0 + k * k) for k in range(-200_000, 200_001))
    assert C_INF == pytest.approx(math.sqrt(series / (2 * math.pi)), abs=1e-5)
    assert C_INF == pytest.approx(0.7085, abs=1e-3)


class TestResidualDualNorm:
    def test_exact_solution_gives_zero(self, flat_problem, flat_gs):
        assert residual_dual_norm(flat_problem, flat_gs, make_basis(1, 16)) <= 1e-11

    def test_single_mode_weight(self):
        # the norm itself: a unit amplitude on wave vector k weighs (1+k^2)^(-1/2)
        b = make_basis(1, 8)
        c = np.zeros(b.n_modes, dtype=complex)
        c[np.flatnonzero(b.modes[:, 0] == 5)[0]] = 1.0
        assert h_norm(SpectralField(b, c), -1.0) == pytest.approx((1 + 25) ** -0.5)

    def test_nondecreasing_and_stabilizing_in_fine_cutoff(self, rough_problem, rough_gs):
        vals = [residual_dual_norm(rough_problem, rough_gs, make_basis(1, M))
                for M in (24, 48, 96, 192)]
        assert all(b >= a - 1e-14 for a, b in zip(vals, vals[1:]))
        assert abs(vals[-1] - vals[-2]) <= 0.01 * vals[-1]


class TestEnergyBounds:
    def test_exact_solution_bounds_collapse(self, flat_problem, flat_gs):
        corr = reconstructed_error(flat_problem, flat_gs, make_basis(1, 16))
        lower, upper = energy_bounds(flat_problem, flat_gs, corr)
        assert lower == pytest.approx(1 / (8 * np.pi), abs=1e-12)
        assert upper == pytest.approx(1 / (8 * np.pi), abs=1e-12)

    def test_brackets_the_reference_energy(self, rough_problem, rough_gs):
        ref = solve_ground_state(rough_problem, make_basis(1, 96),
                                 SolverConfig(tol_residual=1e-12))
        corr = reconstructed_error(rough_problem, rough_gs, make_basis(1, 96))
        lower, upper = energy_bounds(rough_problem, rough_gs, corr)
        slack = 1e-6 * (upper - lower)
        assert lower - slack <= ref.energy <= upper
        assert upper - ref.energy >= 5 * abs(ref.energy - lower)

    def test_requires_the_newton_correction(self, rough_problem, rough_gs):
        from pwgpe.errors import CoercivityViolatedError
        from pwgpe.postprocess import perturbation_correction

        corr = perturbation_correction(rough_problem, rough_gs, make_basis(1, 48))
        with pytest.raises(CoercivityViolatedError):
            energy_bounds(rough_problem, rough_gs, corr)


class TestSpectralGap:
    def test_free_laplacian(self, linear_problem):
        gs = solve_ground_state(linear_problem, make_basis(1, 4))
        lam1, lam2 = spectral_gap(linear_problem, gs, make_basis(1, 16))
        assert lam1 == pytest.approx(0.0, abs=1e-12)
        assert lam2 == pytest.approx(1.0, abs=1e-11)

    def test_flat_problem_matches_dense_diagonalization(self, flat_problem, flat_gs):
        lam1, lam2 = spectral_gap(flat_problem, flat_gs, make_basis(1, 32))
        dense = oracle_spectrum(flat_problem, flat_gs.u, 32, count=2)
        assert lam1 == pytest.approx(dense[0], abs=1e-11)
        assert lam2 == pytest.approx(dense[1], abs=1e-11)
        assert lam2 - lam1 == pytest.approx(1.0, abs=1e-11)

    def test_consistency_with_the_multiplier_on_the_solve_ball(self, rough_problem,
                                                               rough_gs):
        lam1, _ = spectral_gap(rough_problem, rough_gs, rough_gs.basis)
        assert lam1 == pytest.approx(rough_gs.lam, abs=1e-9)

    def test_fine_value_never_exceeds_the_multiplier(self, rough_problem, rough_gs):
        lam1, lam2 = spectral_gap(rough_problem, rough_gs, make_basis(1, 48))
        assert lam1 <= rough_gs.lam + 1e-10
        assert lam2 > lam1


class TestCertificate:
    def test_exact_solution_is_certified_with_tiny_bounds(self, flat_problem, flat_gs):
        rep = kantorovich_certificate(flat_problem, flat_gs, make_basis(1, 16))
        assert rep.certified
        assert rep.eps <= 1e-12
        assert rep.validity_alpha <= 1e-10
        assert rep.error_bound_h1 <= 1e-10
        assert rep.error_bound_sharp <= 1e-10

    def test_certifies_resolved_states_and_bounds_the_error(self, rough_problem,
                                                            rough_gs):
        ref = solve_ground_state(rough_problem, make_basis(1, 96),
                                 SolverConfig(tol_residual=1e-12))
        rep = kantorovich_certificate(rough_problem, rough_gs, make_basis(1, 48))
        assert rep.certified
        err = h_norm(prolong(rough_gs.u, ref.basis) - ref.u, 1.0)
        assert err <= rep.error_bound_h1
        assert err <= rep.error_bound_sharp
        assert rep.error_bound_sharp <= rep.error_bound_h1

    def test_underresolved_state_is_not_certified(self, rough_problem):
        gs = solve_ground_state(rough_problem, make_basis(1, 2),
                                SolverConfig(tol_residual=1e-11))
        rep = kantorovich_certificate(rough_problem, gs, make_basis(1, 8))
        assert not rep.certified
        assert rep.validity_alpha > 1.0
        assert rep.error_bound_h1 == float("inf")

    def test_unsupported_cases_are_rejected(self):
        prob2 = Problem(d=2, a0=1.0, mu=1.0, V=make_potential(2, "zero"))
        gs2 = solve_ground_state(prob2, make_basis(2, 2))
        with pytest.raises(CertificateUnsupportedError):
            kantorovich_certificate(prob2, gs2, make_basis(2, 8))
        prob_p = Problem(d=1, a0=1.0, mu=1.0, V=make_potential(1, "zero"),
                         nl=Nonlinearity(p=2.5))
        gs_p = solve_ground_state(prob_p, make_basis(1, 2))
        with pytest.raises(CertificateUnsupportedError):
            kantorovich_certificate(prob_p, gs_p, make_basis(1, 8))

    def test_report_is_labelled_discrete(self, flat_problem, flat_gs):
        rep = kantorovich_certificate(flat_problem, flat_gs, make_basis(1, 16))
        assert isinstance(rep, EstimateReport)
        assert rep.label == "discrete-certified"
