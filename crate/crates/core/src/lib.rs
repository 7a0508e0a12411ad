//! Data usefulness coefficient (DUC) estimation, source ranking and sampling
//! plans for data drawn from randomly shifted distributions.
//!
//! The crate is organised bottom-up:
//!
//! * [`shift_sim`] draws random region weights and samples perturbed datasets.
//! * [`summaries`] whitens covariates and builds the mean-difference vectors.
//! * [`duc`] computes the coefficient from weight covariances or from summaries.
//! * [`sampling`] solves the size- and budget-constrained allocation problems.
//! * [`erm`] fits weighted estimators and measures excess risk.
//! * [`baselines`] provides KL and domain-classifier scores for comparison.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod duc;
pub mod erm;
pub mod error;
pub mod linalg;
pub mod sampling;
pub mod seeding;
pub mod shift_sim;
pub mod stats;
pub mod summaries;

pub use data::Dataset;
pub use error::{DucError, Result};
