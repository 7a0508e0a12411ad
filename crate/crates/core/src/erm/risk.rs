//! Test-set and population risk of linear predictors.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::fit::{design, solve_normal_equations};
use crate::data::Dataset;
use crate::error::{DucError, Result};

/// Smallest test set for which excess risk is reported without a warning.
pub const MIN_TEST_ROWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub test_mse: f64,
    pub excess_mse: f64,
    pub n_test: usize,
}

/// Squared-error risk `theta^T G theta - 2 theta^T b + yy` of a linear model
/// under a fixed (empirical or population) distribution.
#[derive(Debug, Clone)]
pub struct RiskEvaluator {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub yy: f64,
    pub n: usize,
    pub intercept: bool,
}

impl RiskEvaluator {
    /// Uniform weights over the rows of `test`.
    pub fn from_dataset(test: &Dataset, intercept: bool) -> Result<Self> {
        if test.is_empty() {
            return Err(DucError::EmptyDataset("test set is empty".into()));
        }
        let w = vec![1.0 / test.n_rows() as f64; test.n_rows()];
        let mut ev = Self::weighted(&test.x, test.outcome()?, &w, intercept)?;
        ev.n = test.n_rows();
        Ok(ev)
    }

    /// Rows weighted by probabilities `p` (summing to one).
    pub fn weighted(x: &DMatrix<f64>, y: &DVector<f64>, p: &[f64], intercept: bool) -> Result<Self> {
        if p.len() != x.nrows() || y.len() != x.nrows() {
            return Err(DucError::dim("row weights, covariates and outcome differ in length"));
        }
        let d = design(x, intercept);
        let mut dw = d.clone();
        for (i, mut row) in dw.row_iter_mut().enumerate() {
            row *= p[i];
        }
        let yy = y.iter().zip(p).map(|(v, w)| w * v * v).sum();
        Ok(Self { gram: dw.tr_mul(&d), xty: dw.tr_mul(y), yy, n: x.nrows(), intercept })
    }

    pub fn mse(&self, theta: &DVector<f64>) -> f64 {
        (theta.dot(&(&self.gram * theta)) - 2.0 * theta.dot(&self.xty) + self.yy).max(0.0)
    }

    /// Risk minimiser under this distribution.
    pub fn minimiser(&self) -> Result<DVector<f64>> {
        solve_normal_equations(self.gram.clone(), &self.xty)
    }

    /// `(theta - oracle)^T G (theta - oracle) + 2 (theta - oracle)^T (G oracle - b)`,
    /// the risk difference without cancellation between two large MSEs.
    pub fn excess(&self, theta: &DVector<f64>, oracle: &DVector<f64>) -> f64 {
        let d = theta - oracle;
        let g = &self.gram * oracle - &self.xty;
        d.dot(&(&self.gram * &d)) + 2.0 * d.dot(&g)
    }

    pub fn report(&self, theta: &DVector<f64>, oracle: &DVector<f64>) -> RiskReport {
        RiskReport { test_mse: self.mse(theta), excess_mse: self.excess(theta, oracle), n_test: self.n }
    }
}

/// Excess test MSE of `theta_hat` over `theta_oracle` on `test`.
pub fn excess_risk(
    theta_hat: &DVector<f64>,
    test: &Dataset,
    theta_oracle: &DVector<f64>,
) -> Result<RiskReport> {
    let intercept = theta_hat.len() == test.n_covariates() + 1;
    if !intercept && theta_hat.len() != test.n_covariates() {
        return Err(DucError::dim(format!(
            "parameter has {} entries for {} covariates",
            theta_hat.len(),
            test.n_covariates()
        )));
    }
    if theta_oracle.len() != theta_hat.len() {
        return Err(DucError::dim("oracle and estimate differ in length"));
    }
    if test.n_rows() < MIN_TEST_ROWS {
        log::warn!("excess risk from only {} test rows", test.n_rows());
    }
    Ok(RiskEvaluator::from_dataset(test, intercept)?.report(theta_hat, theta_oracle))
}
