"""Log-concave maximum-likelihood density estimation from censored data.

Fits a concave piecewise-linear log-density plus an optional cure mass at
+infinity to exact, interval-censored, right-censored or binned
observations, via an EM outer loop with an active-set inner maximizer.
"""

from .data import (
    Dataset,
    DegenerateKind,
    DegenerateSolution,
    ExistenceResult,
    GridPolicy,
    NoMleError,
    Observation,
    TauGrid,
    build_estimation_grid,
    check_existence,
    classify_degenerate,
    compute_tau_grid,
    load_dataset,
    load_ovarian,
)
from .density import (
    Grid,
    LogConcaveFit,
    cdf_at,
    density_at,
    fit_from_dict,
    fit_to_dict,
    interval_prob,
    l1_bound,
    load_fit,
    normalized,
    save_fit,
    segment_mass,
    survival_at,
    total_mass,
)
from .em import (
    EmConfig,
    EmState,
    apply_pseudo_observations,
    augmented_loglik,
    e_step,
    em_iterate,
    estimate,
    loglik,
    try_domain_reductions,
    update_q,
)
from .kernels import J, J01, J11, J20, J_tilde
from .simulate import (
    SimScenario,
    SimSummary,
    gamma3_survival,
    gamma_cure_scenario,
    gamma_interval_scenario,
    generate,
    run_study,
    true_survival,
)
from .solver import (
    ConvergenceError,
    Family,
    SolverReport,
    WeightVector,
    gradient,
    maximize,
    objective,
)
from .turnbull import StepSurvival, sup_distance, turnbull, turnbull_loglik

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "DegenerateKind",
    "DegenerateSolution",
    "EmConfig",
    "EmState",
    "ExistenceResult",
    "Family",
    "Grid",
    "GridPolicy",
    "J",
    "J01",
    "J11",
    "J20",
    "J_tilde",
    "LogConcaveFit",
    "NoMleError",
    "Observation",
    "SimScenario",
    "SimSummary",
    "SolverReport",
    "StepSurvival",
    "TauGrid",
    "WeightVector",
    "ConvergenceError",
    "apply_pseudo_observations",
    "augmented_loglik",
    "build_estimation_grid",
    "cdf_at",
    "check_existence",
    "classify_degenerate",
    "compute_tau_grid",
    "density_at",
    "e_step",
    "em_iterate",
    "estimate",
    "fit_from_dict",
    "fit_to_dict",
    "gamma3_survival",
    "gamma_cure_scenario",
    "gamma_interval_scenario",
    "generate",
    "gradient",
    "interval_prob",
    "l1_bound",
    "load_dataset",
    "load_fit",
    "load_ovarian",
    "loglik",
    "maximize",
    "normalized",
    "objective",
    "run_study",
    "save_fit",
    "segment_mass",
    "sup_distance",
    "survival_at",
    "total_mass",
    "true_survival",
    "try_domain_reductions",
    "turnbull",
    "turnbull_loglik",
    "update_q",
]
