"""Stochastic quantum-jump simulation of Markovian open systems.

Pure states evolve as a piecewise deterministic jump process; Heisenberg
matrix elements and general time-ordered multitime correlation functions are
estimated by the same process lifted to a doubled Hilbert space.  A dense
master-equation / quantum-regression oracle validates every estimator.
"""

__version__ = "0.1.0"

from .analysis import (
    SpectrumResult,
    ensemble_stats,
    peak_fwhm,
    prepare_steady_state,
    spectrum_from_correlation,
)
from .correlators import (
    CorrelationPlan,
    EstimatorResult,
    FixedPair,
    InsertionEvent,
    SteadyPrep,
    UniformSphere,
    ensemble_covariance,
    general_correlation,
    heisenberg_matrix_element,
    method1_correlation,
    mixed_initial_correlation,
    naive_independent_matrix_element,
    polarization_decompose,
    symmetric_correlation,
)
from .linalg import Herm2, PropagationError, eig_herm2, matvec, rk4_step
from .model import (
    DriveParams,
    EnvironmentParams,
    JumpChannel,
    ModelError,
    ModelSpec,
    build_channels,
    build_gamma,
    build_h_eff,
    build_model,
    excited_state,
    ground_state,
    scenario_squeezed,
    scenario_thermal,
    scenario_vacuum_drive,
    sigma_minus,
    sigma_plus,
)
from .oracle import (
    lindblad_rhs,
    propagate_rho,
    regression_correlation,
    regression_multitime,
    rho_trajectory,
    steady_state_rho,
)
from .pdp import (
    JumpEngine,
    PairedState,
    RngStream,
    Trajectory,
    evolve_doubled,
    evolve_single,
    locate_jump_time,
)
