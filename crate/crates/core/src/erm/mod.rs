//! Weighted ERM, excess-risk measurement and the validation harness.

mod fit;
mod risk;
mod validate;

pub use fit::{
    design, fit_from_stats, logistic_objective, solve_normal_equations, weighted_fit, weighted_least_squares,
    weighted_logistic, GramStats, LogisticFit, Loss, WeightedFitSpec, NEWTON_MAX_ITER, NEWTON_TOL,
};
pub use risk::{excess_risk, RiskEvaluator, RiskReport, MIN_TEST_ROWS};
pub use validate::{
    target_only_excess, validate_duc, validate_world, BetaMode, CandidateDetail, RiskMode, ValidationOptions,
    ValidationReport, ValidationRow, ValidationSummary,
};
