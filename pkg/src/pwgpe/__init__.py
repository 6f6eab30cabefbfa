"""Planewave solver and error-certification toolkit for the periodic
nonlinear (cubic defocusing) ground-state eigenvalue problem."""

__version__ = "0.1.0"

from .basis import (
    BasisSpec,
    GridField,
    SpectralField,
    from_grid,
    h_norm,
    l2_inner,
    l2_norm,
    load_field,
    make_basis,
    project_orthogonal,
    prolong,
    restrict,
    save_field,
    sobolev_inner,
    to_grid,
)
from .errors import PwgpeError
from .estimate import (
    EstimateReport,
    energy_bounds,
    kantorovich_certificate,
    residual_dual_norm,
    spectral_gap,
)
from .linalg import EigSolveConfig
from .model import (
    GroundState,
    Nonlinearity,
    Problem,
    apply_fock,
    apply_linearized,
    energy,
    make_potential,
    rayleigh,
    residual,
)
from .oracle import oracle_ground_state, oracle_newton_correction, oracle_spectrum
from .postprocess import (
    Correction,
    LinSolveConfig,
    normalize_correction,
    perturbation_correction,
    reconstructed_error,
    two_grid_scheme1,
    two_grid_scheme2a,
    two_grid_scheme2b,
)
from .solve import SolverConfig, gradient_flow_step, scf_step, solve_ground_state
from .study import (
    StudyConfig,
    fit_rate,
    measure,
    reference_solution,
    run_study,
)

__all__ = [name for name in dir() if not name.startswith("_")]
