"""Design-based estimation of finite-population totals under unit nonresponse.

Respondents are reweighted by inverse fitted response probabilities, with the
logistic model coefficients estimated either by maximum likelihood or by
calibrating auxiliary totals (raking) at the population or full-sample level.
Includes analytical variance estimators, an exact variance oracle, and a
deterministic Monte Carlo engine.
"""

from .population import (
    GenConfig,
    Population,
    generate_population,
    logistic,
    logistic_probs,
    population_from_csv,
    population_to_csv,
    population_total,
)
from .designs import (
    DesignKind,
    DesignSpec,
    Sample,
    draw_sample,
    joint_inclusion,
    poisson_design,
    srs_design,
)
from .response import RespondentSet, draw_response
from .solvers import (
    EEKind,
    EstimatingEquation,
    FitNotConvergedError,
    FitResult,
    FitStatus,
    SolverControls,
    calib_residual,
    jacobian,
    residual,
    score_mle,
    solve,
)
from .estimators import (
    EstimateRecord,
    GammaCoefficients,
    Variant,
    gamma_cal_population,
    gamma_cal_sample,
    gamma_coefficients,
    gamma_hat_cal,
    gamma_hat_mle,
    gamma_mle_sample,
    ht_estimate,
    linearized_estimate,
    nwa_estimate,
    two_phase_estimate,
)
from .variance import (
    TheoreticalVariance,
    VarianceEstimate,
    confidence_interval,
    theoretical_variance,
    var_hat_calS,
    var_hat_calU,
    var_hat_ht,
    var_hat_mle,
)
from .montecarlo import (
    ReplicateRecord,
    Scenario,
    StudyReport,
    VariantMetrics,
    VariantOutcome,
    coverage_rate,
    linearization_gap,
    mix_seed,
    relative_bias,
    rrvar,
    run_replicate,
    run_study,
    write_raw_records,
)

__version__ = "0.1.0"
