import numpy as np
import pytest

from conftest import random_real_field
from pwgpe.basis import (
    SpectralField,
    h_norm,
    l2_inner,
    l2_norm,
    make_basis,
    project_orthogonal,
    prolong,
)
from pwgpe.errors import (
    BasisMismatchError,
    CorrectionTooLargeError,
    DiagonalNotInvertibleError,
    IndefiniteOperatorError,
)
from pwgpe.model import PointwiseOperator, Problem, make_potential, residual
from pwgpe.postprocess import (
    LinSolveConfig,
    normalize_correction,
    perturbation_correction,
    reconstructed_error,
    run_scheme,
    two_grid_scheme2a,
    two_grid_scheme2b,
)
from pwgpe.solve import SolverConfig, solve_ground_state

ALL_SCHEMES = ("newton", "tg1", "tg2a", "tg2b", "pert")


@pytest.fixture(scope="module")
def flat_gs(flat_problem):
    return solve_ground_state(flat_problem, make_basis(1, 4),
                              SolverConfig(tol_residual=1e-12))


@pytest.fixture(scope="module")
def rough_gs(rough_problem):
    return solve_ground_state(rough_problem, make_basis(1, 8),
                              SolverConfig(tol_residual=1e-11))


@pytest.fixture(scope="module")
def rough_ref(rough_problem):
    return solve_ground_state(rough_problem, make_basis(1, 64),
                              SolverConfig(tol_residual=1e-12))


class TestExactSolutionFixedPoints:
    @pytest.mark.parametrize("scheme", ALL_SCHEMES)
    def test_every_scheme_returns_the_constant(self, flat_problem, flat_gs, scheme):
        fine = make_basis(1, 16)
        corr = run_scheme(scheme, flat_problem, flat_gs, fine)
        assert h_norm(corr.u_hat - prolong(flat_gs.u, fine), 1.0) <= 1e-9
        assert l2_norm(corr.w_hat) <= 1e-9
        assert abs(l2_norm(corr.u_hat) - 1.0) <= 1e-12
        assert corr.lambda_hat == pytest.approx(flat_gs.lam, abs=1e-10)


class TestNormalization:
    def test_zero_correction_is_identity(self, flat_gs):
        fine = make_basis(1, 16)
        w = SpectralField(fine, np.zeros(fine.n_modes, dtype=complex))
        alpha, u_hat = normalize_correction(flat_gs, w)
        assert alpha == 0.0
        assert np.allclose(u_hat.coeffs, prolong(flat_gs.u, fine).coeffs)

    def test_right_triangle_values(self, flat_gs, rng):
        fine = make_basis(1, 16)
        u_f = prolong(flat_gs.u, fine)
        w = project_orthogonal(random_real_field(fine, rng), u_f)
        w = w * (0.6 / l2_norm(w))
        alpha, u_hat = normalize_correction(flat_gs, w, mode="affine")
        assert 1.0 - alpha == pytest.approx(0.8, abs=1e-14)
        assert l2_norm(u_hat) == pytest.approx(1.0, abs=1e-14)

    def test_both_modes_unit_norm_and_second_order_close(self, flat_gs, rng):
        fine = make_basis(1, 16)
        u_f = prolong(flat_gs.u, fine)
        for scale in (1e-1, 1e-3):
            w = project_orthogonal(random_real_field(fine, rng), u_f)
            w = w * (scale / l2_norm(w))
            _, u_aff = normalize_correction(flat_gs, w, mode="affine")
            beta, u_rad = normalize_correction(flat_gs, w, mode="radial")
            assert abs(l2_norm(u_aff) - 1.0) <= 1e-14
            assert abs(l2_norm(u_rad) - 1.0) <= 1e-14
            assert h_norm(u_aff - u_rad, 0.0) <= 4.0 * scale**2

    def test_oversized_correction_rejected(self, flat_gs, rng):
        fine = make_basis(1, 16)
        u_f = prolong(flat_gs.u, fine)
        w = project_orthogonal(random_real_field(fine, rng), u_f)
        w = w * (1.2 / l2_norm(w))
        with pytest.raises(CorrectionTooLargeError):
            normalize_correction(flat_gs, w, mode="affine")

    def test_nonorthogonal_correction_rejected(self, flat_gs, rng):
        fine = make_basis(1, 16)
        w = random_real_field(fine, rng)  # not projected
        with pytest.raises(BasisMismatchError):
            normalize_correction(flat_gs, w)


class TestReconstructedError:
    def test_requires_fine_enough_space(self, rough_problem, rough_gs):
        with pytest.raises(BasisMismatchError):
            reconstructed_error(rough_problem, rough_gs, make_basis(1, 12))

    def test_linear_case_with_equal_spaces_gives_zero(self):
        prob = Problem(d=1, a0=1.0, mu=0.0, V=make_potential(1, "cosine"))
        gs = solve_ground_state(prob, make_basis(1, 10), SolverConfig(tol_residual=1e-12))
        corr = reconstructed_error(prob, gs, gs.basis,
                                   LinSolveConfig(min_fine_ratio=1.0))
        assert l2_norm(corr.w_hat) <= 1e-10

    def test_quadratic_improvement(self, rough_problem, rough_gs, rough_ref):
        corr = reconstructed_error(rough_problem, rough_gs, make_basis(1, 32))
        err_coarse = h_norm(prolong(rough_gs.u, rough_ref.basis) - rough_ref.u, 1.0)
        err_post = h_norm(prolong(corr.u_hat, rough_ref.basis) - rough_ref.u, 1.0)
        assert err_post <= 0.1 * err_coarse
        assert corr.a_ww >= 0.0
        assert abs(l2_inner(corr.w_hat, prolong(rough_gs.u, corr.basis))) <= 1e-11

    def test_energy_decreases_in_the_asymptotic_regime(self, rough_problem,
                                                       rough_gs):
        corr = reconstructed_error(rough_problem, rough_gs, make_basis(1, 32))
        assert corr.energy_hat <= rough_gs.energy

    def test_satisfies_the_fine_grid_equation(self, rough_problem, rough_gs):
        lin_cfg = LinSolveConfig(tol=1e-10)
        fine = make_basis(1, 32)
        corr = reconstructed_error(rough_problem, rough_gs, fine, lin_cfg)
        u_f = prolong(rough_gs.u, fine)
        lin_op = PointwiseOperator(rough_problem, rough_gs.u, fine,
                                   kind="linearized", shift=rough_gs.lam)
        fock_op = PointwiseOperator(rough_problem, rough_gs.u, fine,
                                    kind="fock", shift=rough_gs.lam)
        lhs = lin_op(u_f + corr.w_hat)
        rhs = lin_op(u_f) - fock_op(u_f)
        mismatch = project_orthogonal(lhs - rhs, u_f)
        assert h_norm(mismatch, -1.0) <= 10 * lin_cfg.tol


class TestTwoGridSchemes:
    def test_scheme1_improves_the_state(self, rough_problem, rough_gs, rough_ref):
        corr = run_scheme("tg1", rough_problem, rough_gs, make_basis(1, 32))
        err_coarse = h_norm(prolong(rough_gs.u, rough_ref.basis) - rough_ref.u, 1.0)
        err_post = h_norm(prolong(corr.u_hat, rough_ref.basis) - rough_ref.u, 1.0)
        assert err_post < err_coarse
        assert corr.info["gap_frozen"] > 0

    def test_scheme2a_deflates_an_indefinite_frozen_operator(self, rough_problem,
                                                             rough_gs, rough_ref):
        corr = two_grid_scheme2a(rough_problem, rough_gs, make_basis(1, 32))
        assert corr.info["ritz_lowest"] < 0  # deep potential, negative bottom
        err_coarse = h_norm(prolong(rough_gs.u, rough_ref.basis) - rough_ref.u, 1.0)
        err_post = h_norm(prolong(corr.u_hat, rough_ref.basis) - rough_ref.u, 1.0)
        assert err_post < err_coarse

    def test_scheme2a_regularizes_the_singular_linear_case(self, linear_problem):
        gs = solve_ground_state(linear_problem, make_basis(1, 4))
        corr = two_grid_scheme2a(linear_problem, gs, make_basis(1, 16))
        assert corr.info["regularized"]
        assert h_norm(corr.u_hat - prolong(gs.u, corr.basis), 1.0) <= 1e-9

    def test_scheme2b_rejects_indefinite_bare_operator(self, cosine_problem):
        gs = solve_ground_state(cosine_problem, make_basis(1, 8),
                                SolverConfig(tol_residual=1e-11))
        with pytest.raises(IndefiniteOperatorError) as err:
            two_grid_scheme2b(cosine_problem, gs, make_basis(1, 32))
        assert err.value.ritz < 0

    def test_scheme2b_solves_with_a_positive_shift(self, rough_problem, rough_ref):
        # same potential shifted up: identical state, bare operator now definite
        params = {"amplitude": 0.8, "sigma": 1.5, "k_knee": 4, "k_max": 48,
                  "seed": 7, "shift": 4.0}
        prob = Problem(d=1, a0=1.0, mu=1.0, V=make_potential(1, "rough", params))
        gs = solve_ground_state(prob, make_basis(1, 8), SolverConfig(tol_residual=1e-11))
        corr = two_grid_scheme2b(prob, gs, make_basis(1, 32))
        err_coarse = h_norm(prolong(gs.u, rough_ref.basis) - rough_ref.u, 1.0)
        err_post = h_norm(prolong(corr.u_hat, rough_ref.basis) - rough_ref.u, 1.0)
        assert err_post < err_coarse

    def test_all_schemes_fix_the_discrete_solution_when_spaces_match(
            self, rough_problem):
        gs = solve_ground_state(rough_problem, make_basis(1, 12),
                                SolverConfig(tol_residual=1e-12))
        for scheme in ("tg1", "tg2a", "pert"):
            corr = run_scheme(scheme, rough_problem, gs, gs.basis)
            assert h_norm(corr.u_hat - gs.u, 1.0) <= 1e-8, scheme
        corr = reconstructed_error(rough_problem, gs, gs.basis,
                                   LinSolveConfig(min_fine_ratio=1.0))
        assert h_norm(corr.u_hat - gs.u, 1.0) <= 1e-8


class TestPerturbation:
    def test_diagonal_formula(self, rough_problem, rough_gs):
        fine = make_basis(1, 32)
        corr = perturbation_correction(rough_problem, rough_gs, fine)
        r = residual(rough_problem, rough_gs, fine)
        M2 = rough_gs.basis.M ** 2
        outside = fine.k2 > M2
        expected = np.where(
            outside, -r.coeffs / (fine.k2 - rough_gs.lam), 0.0
        )
        assert np.allclose(corr.w_hat.coeffs, expected, atol=1e-13)
        # coarse modes untouched, so the correction is orthogonal by support
        assert abs(l2_inner(corr.w_hat, prolong(rough_gs.u, fine))) <= 1e-14

    def test_costs_no_iterations(self, rough_problem, rough_gs):
        corr = perturbation_correction(rough_problem, rough_gs, make_basis(1, 32))
        assert "linsolve" not in corr.info

    def test_precondition_on_the_multiplier(self, flat_problem):
        gs = solve_ground_state(flat_problem, make_basis(1, 0))
        with pytest.raises(DiagonalNotInvertibleError):
            perturbation_correction(flat_problem, gs, make_basis(1, 4))

    def test_improvement_on_the_rough_problem(self, rough_problem, rough_gs, rough_ref):
        corr = perturbation_correction(rough_problem, rough_gs, make_basis(1, 32))
        err_coarse = h_norm(prolong(rough_gs.u, rough_ref.basis) - rough_ref.u, 1.0)
        err_post = h_norm(prolong(corr.u_hat, rough_ref.basis) - rough_ref.u, 1.0)
        assert err_post < 0.25 * err_coarse
