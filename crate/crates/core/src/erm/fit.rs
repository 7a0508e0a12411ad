//! Weighted empirical risk minimisation across sources.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::duc::SourceWeights;
use crate::error::{DucError, Result};

pub const NEWTON_TOL: f64 = 1e-8;
pub const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Loss {
    #[default]
    SquaredError,
    Logistic,
}

/// `argmin_theta sum_k beta_k / n_k sum_i loss(theta; x_i^(k), y_i^(k)) + ridge |theta|^2`
/// (the intercept is not penalised).
#[derive(Debug, Clone)]
pub struct WeightedFitSpec<'a> {
    pub loss: Loss,
    pub beta: SourceWeights,
    pub datasets: Vec<&'a Dataset>,
    pub ridge: f64,
    pub intercept: bool,
}

impl<'a> WeightedFitSpec<'a> {
    pub fn new(loss: Loss, beta: SourceWeights, datasets: Vec<&'a Dataset>) -> Self {
        Self { loss, beta, datasets, ridge: 0.0, intercept: true }
    }
}

/// Covariates with a leading column of ones when `intercept` is set.
pub fn design(x: &DMatrix<f64>, intercept: bool) -> DMatrix<f64> {
    if !intercept {
        return x.clone();
    }
    let mut d = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    d.view_mut((0, 1), (x.nrows(), x.ncols())).copy_from(x);
    d
}

/// Per-row weights `beta_k / n_k` and the stacked design.
fn stack(spec: &WeightedFitSpec<'_>) -> Result<(DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    let k = spec.datasets.len();
    if k == 0 {
        return Err(DucError::EmptyDataset("no datasets to fit".into()));
    }
    if spec.beta.beta.len() != k {
        return Err(DucError::dim(format!("{} weights for {k} datasets", spec.beta.beta.len())));
    }
    if (spec.beta.sum() - 1.0).abs() > 1e-8 {
        return Err(DucError::param(format!("weights sum to {}, not 1", spec.beta.sum())));
    }
    if !(spec.ridge >= 0.0) {
        return Err(DucError::param("ridge must be nonnegative"));
    }
    let p = spec.datasets[0].n_covariates();
    for d in &spec.datasets {
        if d.n_covariates() != p {
            return Err(DucError::dim("datasets differ in covariate count"));
        }
        if d.is_empty() {
            return Err(DucError::EmptyDataset("a source has no rows".into()));
        }
        d.outcome()?;
    }
    let joined = Dataset::concat(&spec.datasets)?;
    let mut w = DVector::zeros(joined.n_rows());
    let mut offset = 0;
    for (d, b) in spec.datasets.iter().zip(spec.beta.beta.iter()) {
        let n = d.n_rows();
        w.rows_mut(offset, n).fill(b / n as f64);
        offset += n;
    }
    let y = joined.y.clone().unwrap();
    Ok((design(&joined.x, spec.intercept), y, w))
}

fn penalty(p: usize, ridge: f64, intercept: bool) -> DMatrix<f64> {
    let mut r = DMatrix::identity(p, p) * ridge;
    if intercept && p > 0 {
        r[(0, 0)] = 0.0;
    }
    r
}

/// Solve `(G + R) theta = b` for a symmetric positive definite system.
/// A pivot below `RANK_TOLERANCE` times its diagonal entry marks rank deficiency.
pub const RANK_TOLERANCE: f64 = 1e-10;

pub fn solve_normal_equations(g: DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let diag = g.diagonal();
    let deficient = || DucError::Singular("weighted design is rank deficient".into());
    let chol = g.cholesky().ok_or_else(deficient)?;
    let l = chol.l_dirty();
    if (0..diag.len()).any(|i| l[(i, i)] * l[(i, i)] <= RANK_TOLERANCE * diag[i].abs()) {
        return Err(deficient());
    }
    Ok(chol.solve(b))
}

pub fn weighted_least_squares(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    ridge: f64,
    intercept: bool,
) -> Result<DVector<f64>> {
    let mut xw = x.clone();
    for (i, mut row) in xw.row_iter_mut().enumerate() {
        row *= w[i];
    }
    let g = xw.tr_mul(x) + penalty(x.ncols(), ridge, intercept);
    solve_normal_equations(g, &xw.tr_mul(y))
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(t))` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub theta: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub grad_norm: f64,
}

pub fn logistic_objective(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    theta: &DVector<f64>,
    ridge: f64,
    intercept: bool,
) -> f64 {
    let eta = x * theta;
    let data: f64 = (0..x.nrows()).map(|i| w[i] * (softplus(eta[i]) - y[i] * eta[i])).sum();
    let r = penalty(theta.len(), ridge, intercept);
    data + 0.5 * theta.dot(&(&r * theta))
}

/// Damped Newton iterations on the weighted logistic log-loss.
pub fn weighted_logistic(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    ridge: f64,
    intercept: bool,
    max_iter: usize,
) -> Result<LogisticFit> {
    let p = x.ncols();
    let r = penalty(p, ridge, intercept);
    let mut theta = DVector::zeros(p);
    let mut obj = logistic_objective(x, y, w, &theta, ridge, intercept);
    let mut grad_norm = f64::INFINITY;
    for it in 0..max_iter {
        let eta = x * &theta;
        let mut resid = DVector::zeros(x.nrows());
        let mut xw = x.clone();
        for i in 0..x.nrows() {
            let s = sigmoid(eta[i]);
            resid[i] = w[i] * (s - y[i]);
            let h = w[i] * s * (1.0 - s);
            xw.row_mut(i).scale_mut(h);
        }
        let grad = x.tr_mul(&resid) + &r * &theta;
        grad_norm = grad.norm();
        if grad_norm <= NEWTON_TOL {
            return Ok(LogisticFit { theta, iterations: it, converged: true, grad_norm });
        }
        let hess = xw.tr_mul(x) + &r;
        let step = solve_normal_equations(hess, &grad)?;
        let mut t = 1.0;
        loop {
            let cand = &theta - &step * t;
            let f = logistic_objective(x, y, w, &cand, ridge, intercept);
            if f <= obj - 1e-4 * t * grad.dot(&step) || t < 1e-10 {
                theta = cand;
                obj = f;
                break;
            }
            t *= 0.5;
        }
    }
    Ok(LogisticFit { theta, iterations: max_iter, converged: false, grad_norm })
}

/// Weighted ERM estimate `theta_hat^K(beta)`.
pub fn weighted_fit(spec: &WeightedFitSpec<'_>) -> Result<DVector<f64>> {
    let (x, y, w) = stack(spec)?;
    match spec.loss {
        Loss::SquaredError => weighted_least_squares(&x, &y, &w, spec.ridge, spec.intercept),
        Loss::Logistic => {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(DucError::param("logistic loss needs 0/1 outcomes"));
            }
            let fit = weighted_logistic(&x, &y, &w, spec.ridge, spec.intercept, NEWTON_MAX_ITER)?;
            if !fit.converged {
                return Err(DucError::NonConvergence {
                    iterations: fit.iterations,
                    context: format!("logistic Newton, gradient norm {:.3e}", fit.grad_norm),
                });
            }
            Ok(fit.theta)
        }
    }
}

/// Sufficient statistics of one dataset for squared-loss fits.
#[derive(Debug, Clone)]
pub struct GramStats {
    pub gram: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub n: usize,
}

impl GramStats {
    pub fn new(data: &Dataset, intercept: bool) -> Result<Self> {
        let x = design(&data.x, intercept);
        let y = data.outcome()?;
        Ok(Self { gram: x.tr_mul(&x), xty: x.tr_mul(y), n: data.n_rows() })
    }
}

/// Weighted least squares from cached per-source statistics.
pub fn fit_from_stats(parts: &[(&GramStats, f64)], ridge: f64, intercept: bool) -> Result<DVector<f64>> {
    let p = parts.first().ok_or_else(|| DucError::EmptyDataset("no datasets to fit".into()))?.0.xty.len();
    let mut g = penalty(p, ridge, intercept);
    let mut b = DVector::zeros(p);
    for (s, beta) in parts {
        let scale = beta / s.n as f64;
        g += &s.gram * scale;
        b += &s.xty * scale;
    }
    solve_normal_equations(g, &b)
}
