//! The coefficient estimated from covariate mean differences.

use nalgebra::{DMatrix, DVector};

use super::types::{CombinedCov, DucEstimate, DucMethod};
use crate::error::{DucError, Result};
use crate::linalg::sample_covariance;
use crate::stats::normal_quantile;
use crate::summaries::ZMatrix;

/// Residual variance below this fraction of the column's own variance is
/// treated as an exact fit.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;
const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PartialCorrOptions {
    /// Include an intercept in the residual regressions (centres the columns).
    pub intercept: bool,
}

impl Default for PartialCorrOptions {
    fn default() -> Self {
        Self { intercept: true }
    }
}

fn residualize(y: &DVector<f64>, design: &Option<DMatrix<f64>>) -> DVector<f64> {
    match design {
        None => y.clone(),
        Some(q) => y - q * (q.transpose() * y),
    }
}

/// Orthonormal basis of the conditioning design, or a singularity error.
fn conditioning_basis(z: &ZMatrix, opts: PartialCorrOptions) -> Result<Option<DMatrix<f64>>> {
    let m = z.matrix();
    let l = z.l();
    let k = z.k();
    let mut cols: Vec<DVector<f64>> = Vec::new();
    if opts.intercept {
        cols.push(DVector::from_element(l, 1.0));
    }
    for j in 1..k {
        cols.push(m.column(j).into_owned());
    }
    if cols.is_empty() {
        return Ok(None);
    }
    let d = DMatrix::from_columns(&cols);
    let qr = d.clone().qr();
    let r = qr.r();
    for (i, col) in cols.iter().enumerate() {
        let norm = col.norm();
        if norm == 0.0 || r[(i, i)].abs() <= RANK_TOLERANCE * norm {
            return Err(DucError::Singular("conditioning columns Z^(2..K) are collinear".into()));
        }
    }
    Ok(Some(qr.q()))
}

fn spread(v: &DVector<f64>, centered: bool) -> f64 {
    if centered {
        let m = v.mean();
        v.iter().map(|x| (x - m).powi(2)).sum()
    } else {
        v.norm_squared()
    }
}

/// Partial correlation of `Z^(1)` and `Z^(K+1)` given `Z^(2..K)`.
pub fn partial_correlation_with(z: &ZMatrix, opts: PartialCorrOptions) -> Result<f64> {
    let basis = conditioning_basis(z, opts)?;
    let a = z.column(0);
    let b = z.column(z.k());
    let ra = residualize(&a, &basis);
    let rb = residualize(&b, &basis);
    let (sa, sb) = (ra.norm_squared(), rb.norm_squared());
    let (ta, tb) = (spread(&a, opts.intercept), spread(&b, opts.intercept));
    if sa <= RESIDUAL_TOLERANCE * ta || ta == 0.0 {
        return Err(DucError::DegenerateResidual("Z^(1) is explained by the conditioning columns".into()));
    }
    if sb <= RESIDUAL_TOLERANCE * tb || tb == 0.0 {
        return Err(DucError::DegenerateResidual(
            "the candidate column is explained by the conditioning columns".into(),
        ));
    }
    Ok((ra.dot(&rb) / (sa * sb).sqrt()).clamp(-1.0, 1.0))
}

pub fn partial_correlation(z: &ZMatrix) -> Result<f64> {
    partial_correlation_with(z, PartialCorrOptions::default())
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(DucError::param(format!("alpha {alpha} outside (0, 1)")));
    }
    Ok(())
}

/// Fisher-transform interval `g^-1(g(rho2) +- z / sqrt(L))` with
/// `g(rho2) = atanh(sqrt(rho2))` and `g^-1(t) = tanh(max(t, 0))^2`.
pub fn fisher_ci(rho2_hat: f64, l: usize, alpha: f64) -> Result<(f64, f64)> {
    check_alpha(alpha)?;
    if l < 3 {
        return Err(DucError::param(format!("confidence interval needs L >= 3, got {l}")));
    }
    if rho2_hat.is_nan() || rho2_hat < 0.0 {
        return Err(DucError::param(format!("rho2 {rho2_hat} outside [0, 1)")));
    }
    if rho2_hat >= 1.0 {
        return Err(DucError::Boundary("rho2 = 1 has an infinite Fisher transform".into()));
    }
    let g = rho2_hat.sqrt().atanh();
    let half = normal_quantile(1.0 - alpha / 2.0)? / (l as f64).sqrt();
    let back = |t: f64| t.max(0.0).tanh().powi(2).clamp(0.0, 1.0);
    Ok((back(g - half), back(g + half)))
}

pub fn estimate_duc_with(z: &ZMatrix, alpha: f64, opts: PartialCorrOptions) -> Result<DucEstimate> {
    check_alpha(alpha)?;
    let r = partial_correlation_with(z, opts)?;
    let rho2 = (r * r).min(1.0);
    let ci = if rho2 >= 1.0 - 1e-15 { (1.0, 1.0) } else { fisher_ci(rho2, z.l(), alpha)? };
    Ok(DucEstimate {
        source_id: None,
        rho2,
        ci: [ci.0, ci.1],
        l: Some(z.l()),
        alpha: Some(alpha),
        method: DucMethod::EmpiricalPartialCorrelation,
        trials: 1,
    })
}

pub fn estimate_duc(z: &ZMatrix, alpha: f64) -> Result<DucEstimate> {
    estimate_duc_with(z, alpha, PartialCorrOptions::default())
}

/// Empirical `Sigma^{K+1}` from `Z`.
///
/// The columns are first mapped to `V^(1) = -Z^(1)` and
/// `V^(k) = Z^(k) - Z^(1)`, i.e. each source's sample mean minus the target
/// population mean. Their covariance across covariates estimates
/// `A Sigma^W A^T / m + diag(1/n)`, the combined covariance in scaled form;
/// the raw `Z` columns would add `1/n_1` to every source entry.
pub fn estimate_weight_cov(z: &ZMatrix) -> Result<CombinedCov> {
    let l = z.l();
    if l < 2 {
        return Err(DucError::param("need at least 2 covariates"));
    }
    let m = z.matrix();
    let z1 = m.column(0);
    let mut v = DMatrix::zeros(l, m.ncols());
    v.set_column(0, &(-z1));
    for k in 1..m.ncols() {
        v.set_column(k, &(m.column(k) - z1));
    }
    CombinedCov::new(sample_covariance(&v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn zm(cols: &[&[f64]]) -> ZMatrix {
        let v: Vec<DVector<f64>> = cols.iter().map(|c| DVector::from_row_slice(c)).collect();
        ZMatrix::from_columns(&v).unwrap()
    }

    #[test]
    fn identical_columns_have_unit_correlation() {
        let z = zm(&[&[1.0, 2.0, 4.0, 3.0], &[1.0, 2.0, 4.0, 3.0]]);
        assert!((partial_correlation(&z).unwrap() - 1.0).abs() < 1e-12);
        let e = estimate_duc(&z, 0.05).unwrap();
        assert_eq!(e.rho2, 1.0);
        assert_eq!(e.ci, [1.0, 1.0]);
    }

    #[test]
    fn orthogonal_centered_columns_are_uncorrelated() {
        let z = zm(&[&[1.0, -1.0, 1.0, -1.0], &[1.0, 1.0, -1.0, -1.0]]);
        assert!(partial_correlation(&z).unwrap().abs() < 1e-15);
    }

    #[test]
    fn matches_precision_matrix_formula() {
        let mut rng = rng_from_seed(10);
        let l = 50;
        let mut m = DMatrix::from_fn(l, 3, |_, _| StandardNormal.sample(&mut rng));
        for i in 0..l {
            m[(i, 2)] += 0.5 * m[(i, 0)] + 0.3 * m[(i, 1)];
            m[(i, 0)] += 0.4 * m[(i, 1)];
        }
        let z = ZMatrix::new(m.clone()).unwrap();
        let got = partial_correlation(&z).unwrap();
        let p = sample_covariance(&m).try_inverse().unwrap();
        let expect = -p[(0, 2)] / (p[(0, 0)] * p[(2, 2)]).sqrt();
        assert!((got - expect).abs() < 1e-10);
    }

    #[test]
    fn no_intercept_is_cosine_of_residuals() {
        let z = zm(&[&[1.0, 2.0, 3.0], &[1.0, 0.0, 1.0]]);
        let r = partial_correlation_with(&z, PartialCorrOptions { intercept: false }).unwrap();
        let expect = 4.0 / (14.0f64.sqrt() * 2.0f64.sqrt());
        assert!((r - expect).abs() < 1e-14);
    }

    #[test]
    fn collinear_conditioning_is_singular() {
        let z = zm(&[&[1.0, 2.0, 0.0, 1.0, 5.0], &[1.0, 1.0, 1.0, 1.0, 1.0], &[3.0, 1.0, 2.0, 2.0, 0.0]]);
        assert!(matches!(partial_correlation(&z), Err(DucError::Singular(_))));
    }

    #[test]
    fn explained_column_is_degenerate() {
        let z = zm(&[&[1.0, 2.0, 3.0, 5.0], &[2.0, 4.0, 6.0, 10.0], &[1.0, 0.0, 2.0, 1.0]]);
        assert!(matches!(partial_correlation(&z), Err(DucError::DegenerateResidual(_))));
    }

    #[test]
    fn fisher_interval_at_zero() {
        let (lo, hi) = fisher_ci(0.0, 100, 0.05).unwrap();
        assert_eq!(lo, 0.0);
        let z = normal_quantile(0.975).unwrap();
        assert!((hi - (z / 10.0).tanh().powi(2)).abs() < 1e-15);
    }

    #[test]
    fn fisher_interval_shrinks_with_l_and_rejects_boundary() {
        let mut width = f64::INFINITY;
        for l in [10, 40, 160, 640, 2560] {
            let (lo, hi) = fisher_ci(0.3, l, 0.05).unwrap();
            assert!(lo <= 0.3 && 0.3 <= hi);
            assert!(hi - lo < width);
            width = hi - lo;
        }
        assert!(matches!(fisher_ci(1.0, 10, 0.05), Err(DucError::Boundary(_))));
        assert!(fisher_ci(0.3, 2, 0.05).is_err());
        assert!(fisher_ci(0.3, 10, 1.0).is_err());
    }

    #[test]
    fn weight_cov_of_zero_columns_is_zero() {
        let z = ZMatrix::new(DMatrix::zeros(5, 3)).unwrap();
        let sk = estimate_weight_cov(&z).unwrap();
        assert_eq!(sk.matrix, DMatrix::zeros(3, 3));
    }

    #[test]
    fn weight_cov_is_symmetric_and_undoes_differencing() {
        let mut rng = rng_from_seed(2);
        let m = DMatrix::from_fn(20, 3, |_, _| StandardNormal.sample(&mut rng));
        let sk = estimate_weight_cov(&ZMatrix::new(m.clone()).unwrap()).unwrap();
        assert_eq!(sk.matrix, sk.matrix.transpose());
        let var_z1 = sample_covariance(&m)[(0, 0)];
        assert!((sk.matrix[(0, 0)] - var_z1).abs() < 1e-12);
    }
}
