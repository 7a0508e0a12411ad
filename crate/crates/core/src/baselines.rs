//! Competing source-ranking scores: Gaussian KL divergence and a
//! domain-classifier score.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::erm::{design, weighted_logistic, NEWTON_MAX_ITER};
use crate::error::{DucError, Result};
use crate::summaries::{SourceSummary, Whitener};

/// Relative ridge added to covariances before inversion.
pub const KL_RIDGE: f64 = 1e-10;
/// L2 penalty of the domain classifier.
pub const CLASSIFIER_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMethod {
    KlGaussian,
    DomainClassifier,
}

/// Lower values mean the source looks more like the target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineScore {
    pub source_id: String,
    pub method: BaselineMethod,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub diagnostics: Vec<String>,
}

fn ridged(m: &DMatrix<f64>) -> DMatrix<f64> {
    let l = m.nrows();
    let eps = KL_RIDGE * m.trace().abs() / l as f64;
    let mut r = m.clone();
    for i in 0..l {
        r[(i, i)] += eps;
    }
    r
}

/// `KL(N(mu_s, S_s) || N(mu_t, S_t))` from summary moments.
pub fn kl_gaussian(source: &SourceSummary, target: &SourceSummary) -> Result<BaselineScore> {
    let l = target.dim();
    if source.dim() != l {
        return Err(DucError::dim(format!(
            "source {} has {} covariates, target has {l}",
            source.source_id,
            source.dim()
        )));
    }
    let missing = |s: &SourceSummary| DucError::Schema(format!("summary {} has no covariance", s.source_id));
    let cs = source.cov.as_ref().ok_or_else(|| missing(source))?;
    let ct = target.cov.as_ref().ok_or_else(|| missing(target))?;
    let score = |value| BaselineScore {
        source_id: source.source_id.clone(),
        method: BaselineMethod::KlGaussian,
        value,
        diagnostics: Vec::new(),
    };
    if cs == ct && source.means == target.means {
        return Ok(score(0.0));
    }
    let singular = |s: &SourceSummary| {
        DucError::Singular(format!("covariance of {} is not positive definite", s.source_id))
    };
    let chs = ridged(cs).cholesky().ok_or_else(|| singular(source))?;
    let cht = ridged(ct).cholesky().ok_or_else(|| singular(target))?;
    let logdet = |l: &DMatrix<f64>| 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let trace = cht.solve(&ridged(cs)).trace();
    let d = &target.means - &source.means;
    let maha = d.dot(&cht.solve(&d));
    let kl = 0.5 * (trace + maha - l as f64 + logdet(&cht.l()) - logdet(&chs.l()));
    Ok(score(kl.max(0.0)))
}

/// Regularised logistic classifier of source (1) against target (0) rows,
/// trained on the jointly whitened union with inverse-frequency weights;
/// the score is the mean predicted source probability over source rows.
pub fn domain_classifier_score(source_id: &str, source: &Dataset, target: &Dataset) -> Result<BaselineScore> {
    domain_classifier_score_with(source_id, source, target, CLASSIFIER_LAMBDA)
}

pub fn domain_classifier_score_with(
    source_id: &str,
    source: &Dataset,
    target: &Dataset,
    lambda: f64,
) -> Result<BaselineScore> {
    if source.is_empty() || target.is_empty() {
        return Err(DucError::EmptyDataset("classifier needs rows from both sides".into()));
    }
    if source.n_covariates() != target.n_covariates() {
        return Err(DucError::dim("source and target differ in covariate count"));
    }
    if !(lambda >= 0.0) {
        return Err(DucError::param("lambda must be nonnegative"));
    }
    let union = Dataset::concat(&[source, target])?;
    let whitener = Whitener::fit(&union)?;
    let x = design(&whitener.transform_rows(&union.x), true);
    let (ns, nt) = (source.n_rows(), target.n_rows());
    let y = DVector::from_fn(ns + nt, |i, _| if i < ns { 1.0 } else { 0.0 });
    let w = DVector::from_fn(ns + nt, |i, _| if i < ns { 0.5 / ns as f64 } else { 0.5 / nt as f64 });
    let fit = weighted_logistic(&x, &y, &w, lambda, true, NEWTON_MAX_ITER)?;
    let eta = x.rows(0, ns) * &fit.theta;
    let value = eta.iter().map(|&t| 1.0 / (1.0 + (-t).exp())).sum::<f64>() / ns as f64;
    let mut diagnostics = Vec::new();
    if !fit.converged {
        diagnostics.push(format!(
            "classifier stopped after {} iterations with gradient norm {:.3e}; classes may be separable",
            fit.iterations, fit.grad_norm
        ));
    }
    Ok(BaselineScore {
        source_id: source_id.to_string(),
        method: BaselineMethod::DomainClassifier,
        value: value.clamp(0.0, 1.0),
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeding::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn summary(id: &str, means: &[f64], cov: DMatrix<f64>) -> SourceSummary {
        SourceSummary::new(id, DVector::from_row_slice(means), 100, Some(cov)).unwrap()
    }

    fn gaussian(n: usize, l: usize, shift: f64, seed: u64) -> Dataset {
        let mut rng = rng_from_seed(seed);
        let x = DMatrix::from_fn(n, l, |_, j| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if j == 0 { shift } else { 0.0 }
        });
        Dataset::from_covariates(x)
    }

    #[test]
    fn identical_moments_give_zero() {
        let c = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
        let p = summary("p", &[1.0, -1.0], c);
        assert_eq!(kl_gaussian(&p, &p.clone()).unwrap().value, 0.0);
    }

    #[test]
    fn mean_shift_under_identity() {
        let i = DMatrix::identity(3, 3);
        let p = summary("p", &[1.0, 2.0, -0.5], i.clone());
        let q = summary("q", &[0.0, 0.0, 0.0], i);
        let kl = kl_gaussian(&p, &q).unwrap().value;
        assert!((kl - 0.5 * (1.0 + 4.0 + 0.25)).abs() < 1e-8);
    }

    #[test]
    fn kl_is_asymmetric() {
        let p = summary("p", &[0.0, 1.0], DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 2.0]));
        let q = summary("q", &[0.5, 0.0], DMatrix::from_row_slice(2, 2, &[3.0, -0.4, -0.4, 0.5]));
        let a = kl_gaussian(&p, &q).unwrap().value;
        let b = kl_gaussian(&q, &p).unwrap().value;
        assert!((a - b).abs() > 1e-3);
    }

    #[test]
    fn missing_covariance_is_a_schema_error() {
        let p = SourceSummary::new("p", DVector::zeros(2), 10, None).unwrap();
        assert!(matches!(kl_gaussian(&p, &p), Err(DucError::Schema(_))));
    }

    #[test]
    fn same_distribution_scores_near_half() {
        let all = gaussian(2000, 3, 0.0, 1);
        let a = all.select_rows(&(0..1000).collect::<Vec<_>>());
        let b = all.select_rows(&(1000..2000).collect::<Vec<_>>());
        let s = domain_classifier_score("a", &a, &b).unwrap();
        assert!((s.value - 0.5).abs() < 0.05, "{}", s.value);
        assert!(s.diagnostics.is_empty());
    }

    #[test]
    fn separable_supports_approach_one() {
        let mut a = gaussian(200, 2, 0.0, 2);
        let mut b = gaussian(200, 2, 0.0, 3);
        for i in 0..200 {
            a.x[(i, 0)] = -a.x[(i, 0)].abs() - 20.0;
            b.x[(i, 0)] = b.x[(i, 0)].abs() + 20.0;
        }
        let loose = domain_classifier_score_with("a", &a, &b, 1e-1).unwrap().value;
        let tight = domain_classifier_score_with("a", &a, &b, 1e-6).unwrap().value;
        assert!(tight > loose);
        assert!(tight > 0.99, "{tight}");
    }

    #[test]
    fn affine_invariance() {
        let a = gaussian(300, 3, 0.7, 4);
        let b = gaussian(400, 3, 0.0, 5);
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 0.5, 0.0, -1.0, 1.0, 0.3, 0.2, 0.0, 3.0]);
        let shift = DVector::from_row_slice(&[5.0, -2.0, 1.0]);
        let map = |d: &Dataset| {
            let mut x = &d.x * m.transpose();
            for mut row in x.row_iter_mut() {
                row += shift.transpose();
            }
            Dataset::from_covariates(x)
        };
        let s1 = domain_classifier_score("a", &a, &b).unwrap().value;
        let s2 = domain_classifier_score("a", &map(&a), &map(&b)).unwrap().value;
        assert!((s1 - s2).abs() < 1e-6);
    }
}
