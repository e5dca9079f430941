"""Stochastic particle flow filtering with condition-number optimal log-homotopies."""

from .errors import AssumptionViolation, BracketError, ContractError, FlowError, MeasurementError
from .gaussian_model import (
    GaussianLogDensity,
    MeasurementModel,
    MomentPair,
    combine,
    eval_log_density,
    grad_log_density,
    linearize_likelihood,
    posterior_moments,
)
from .homotopy_optimizer import (
    HomotopyPath,
    NormChoice,
    OptimizerConfig,
    bvp_rhs,
    check_theorem_3_2,
    condition_number,
    guard_modified_beta,
    kappa_gradient,
    m_matrix,
    matrix_condition_number,
    objective,
    solve_optimal_homotopy,
)
from .particle_flow import (
    FlowContext,
    ParticleEnsemble,
    drift,
    euler_maruyama_moments,
    flow_jacobian,
    integrate_ensemble,
    moment_ode_oracle,
    stiffness_ratio,
)
from .scenario_bench import McReport, Scenario, bearing_model, figure2_traces, paper_scenario, run_mc

__version__ = "0.1.0"
