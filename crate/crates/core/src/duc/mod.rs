//! The data usefulness coefficient.
//!
//! For a target (source 1), existing sources `2..K` and a candidate `K+1`,
//! the coefficient is the fraction of the target's excess risk removed by
//! adding the candidate to a weighted ERM fit. It can be computed from the
//! weight covariance `Sigma^W` ([`duc_population`], [`duc_independent`]) or
//! estimated from covariate means alone ([`estimate_duc`]).

mod empirical;
mod population;
mod rank;
mod types;

pub use empirical::{
    estimate_duc, estimate_duc_with, estimate_weight_cov, fisher_ci, partial_correlation,
    partial_correlation_with, PartialCorrOptions, RESIDUAL_TOLERANCE,
};
pub use population::{
    assemble_sigma_k, duc_independent, duc_population, duc_population_detailed, optimal_beta,
    optimal_beta_nonneg, project_simplex, PopulationDuc, BETA_RIDGE,
};
pub use rank::{rank_candidates, rank_candidates_subsampled, sort_ranking, whiten_summaries, SubsampleSpec};
pub use types::{
    ApproxTarget, CRatios, CombinedCov, DucEstimate, DucMethod, SourceWeights, WeightCov, WeightCovForm,
};
