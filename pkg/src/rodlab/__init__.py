"""rodlab: a numerical laboratory for rigid-rod polymer kinetics.

Closed conformation-tensor dynamics and its limit cycle, the underlying
constrained and mean-field SDE ensembles, Gaussian Fokker-Planck entropy
diagnostics, and the replica propagation-of-chaos experiment.
"""

__version__ = "0.1.0"

from .errors import (
    ConvergenceError,
    DegenerateEnsembleError,
    FitError,
    IntegrationFailureError,
    InvalidParameterError,
    InvalidSlackError,
    InvalidStateError,
    NoReturnError,
    NumericalStateError,
    RegimeError,
    RodlabError,
    ScenarioError,
    UnsupportedDimensionError,
)
from .types import (
    ConfTensor,
    Ensemble,
    FlowMatrix,
    ModelParams,
    QState,
    conf_from_q,
    cycle_regime_check,
    make_shear_kappa,
    polar_from_q,
    q_from_conf,
    q_from_polar,
)
from .closure import (
    OdeConfig,
    Trajectory,
    doi_closure_gap,
    integrate,
    integrate_polar,
    integrate_xy,
    renormalized,
    rhs_matrix,
    rhs_polar,
    rhs_xy,
)
from .cycle import (
    AnnulusSpec,
    CycleReport,
    annulus,
    convergence_rate,
    divergence,
    dulac_margin,
    find_cycle,
    fit_exponential_tail,
    poincare_return,
)
from .sde import (
    MomentSeries,
    SdeConfig,
    empirical_second_moment,
    initial_gaussian_ensemble,
    initial_replica_ensemble,
    initial_sphere_ensemble,
    load_checkpoint,
    run,
    save_checkpoint,
    sphere_constraint_error,
    replica_constraint_error,
    step_meanfield_a,
    step_meanfield_b,
    step_original,
    step_replica,
)
from .gaussian import (
    DriftMatrixK,
    EntropyDissipationSeries,
    GaussianState,
    PsiConvergence,
    drift_k,
    entropy_dissipation_check,
    fisher_information,
    fisher_information_quadrature,
    lsi_constant,
    prec_rhs,
    psi_convergence_experiment,
    relative_entropy,
    relative_entropy_quadrature,
)
from .chaos import (
    ChaosConfig,
    ChaosResult,
    coupled_initial_conditions,
    limit_process_step,
    moment_ode_series,
    run_chaos_experiment,
)
from .scenario import Scenario, load_scenario, parse_scenario
from .runner import RunResult, execute, sweep
