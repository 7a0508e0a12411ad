//! Covariate summaries, whitening and the mean-difference vectors `Z^(k)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{default_names, Dataset};
use crate::error::{DucError, Result};
use crate::linalg::{column_means, max_asymmetry, min_eigenvalue, sample_covariance};

/// Relative ridge added to the pooled covariance before factoring.
pub const WHITEN_RIDGE: f64 = 1e-8;
/// A Cholesky pivot whose squared value falls below this fraction of the
/// covariate's variance marks the covariate as (near) collinear.
pub const PIVOT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct SourceSummary {
    pub source_id: String,
    pub means: DVector<f64>,
    pub n: usize,
    pub cov: Option<DMatrix<f64>>,
}

/// JSON interchange form of [`SourceSummary`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub source_id: String,
    pub n: usize,
    pub means: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cov: Option<Vec<Vec<f64>>>,
}

impl SourceSummary {
    pub fn new(
        source_id: impl Into<String>,
        means: DVector<f64>,
        n: usize,
        cov: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let s = Self { source_id: source_id.into(), means, n, cov };
        s.validate()?;
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.is_empty() {
            return Err(DucError::Schema(format!("summary {} has no covariates", self.source_id)));
        }
        if self.n == 0 {
            return Err(DucError::Schema(format!("summary {} has n = 0", self.source_id)));
        }
        if self.means.iter().any(|v| !v.is_finite()) {
            return Err(DucError::Schema(format!("summary {} has non-finite means", self.source_id)));
        }
        if let Some(c) = &self.cov {
            let l = self.dim();
            if c.nrows() != l || c.ncols() != l {
                return Err(DucError::dim(format!(
                    "summary {} covariance is {}x{}, expected {l}x{l}",
                    self.source_id,
                    c.nrows(),
                    c.ncols()
                )));
            }
            let scale = c.diagonal().amax().max(1.0);
            if max_asymmetry(c) > 1e-8 * scale || min_eigenvalue(c) < -1e-8 * scale {
                return Err(DucError::Schema(format!(
                    "summary {} covariance is not symmetric positive semidefinite",
                    self.source_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_record(&self) -> SummaryRecord {
        SummaryRecord {
            source_id: self.source_id.clone(),
            n: self.n,
            means: self.means.iter().cloned().collect(),
            cov: self.cov.as_ref().map(|c| c.row_iter().map(|r| r.iter().cloned().collect()).collect()),
        }
    }

    pub fn from_record(r: &SummaryRecord) -> Result<Self> {
        let l = r.means.len();
        let cov = match &r.cov {
            None => None,
            Some(rows) => {
                if rows.len() != l || rows.iter().any(|row| row.len() != l) {
                    return Err(DucError::Schema(format!(
                        "summary {} covariance must be {l}x{l}",
                        r.source_id
                    )));
                }
                Some(DMatrix::from_fn(l, l, |i, j| rows[i][j]))
            }
        };
        Self::new(r.source_id.clone(), DVector::from_vec(r.means.clone()), r.n, cov)
    }
}

/// Population covariate means of the target, e.g. census values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetMoments {
    pub means: Vec<f64>,
    #[serde(default = "yes")]
    pub known_exactly: bool,
}

fn yes() -> bool {
    true
}

impl TargetMoments {
    pub fn new(means: DVector<f64>, known_exactly: bool) -> Result<Self> {
        if means.iter().any(|v| !v.is_finite()) {
            return Err(DucError::Schema("target moments must be finite".into()));
        }
        Ok(Self { means: means.iter().cloned().collect(), known_exactly })
    }

    pub fn vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.means)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WhitenMode {
    /// Fit on the union of all sources.
    #[default]
    Pooled,
    /// Fit on target rows only.
    TargetOnly,
}

/// Affine map `x -> factor^-1 (x - center)` with `factor` lower triangular.
#[derive(Debug, Clone, PartialEq)]
pub struct Whitener {
    pub names: Vec<String>,
    pub center: DVector<f64>,
    pub factor: DMatrix<f64>,
}

impl Whitener {
    pub fn identity(l: usize) -> Self {
        Self { names: default_names(l), center: DVector::zeros(l), factor: DMatrix::identity(l, l) }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// Fit on the rows of one dataset.
    pub fn fit(data: &Dataset) -> Result<Self> {
        let l = data.n_covariates();
        if data.n_rows() < l + 1 {
            return Err(DucError::EmptyDataset(format!(
                "whitening {l} covariates needs at least {} rows, got {}",
                l + 1,
                data.n_rows()
            )));
        }
        Self::from_moments(data.names.clone(), column_means(&data.x), sample_covariance(&data.x))
    }

    /// Fit on the union of several datasets.
    pub fn fit_pooled(parts: &[&Dataset]) -> Result<Self> {
        Self::fit(&Dataset::concat(parts)?)
    }

    /// Pooled moments implied by summaries that all carry covariances.
    pub fn from_summaries(summaries: &[&SourceSummary]) -> Result<Self> {
        let first =
            summaries.first().ok_or_else(|| DucError::EmptyDataset("no summaries to whiten".into()))?;
        let l = first.dim();
        let total: usize = summaries.iter().map(|s| s.n).sum();
        let mut center = DVector::zeros(l);
        for s in summaries {
            if s.dim() != l {
                return Err(DucError::dim("summaries disagree on covariate count"));
            }
            center += &s.means * s.n as f64;
        }
        center /= total as f64;
        let mut scatter = DMatrix::zeros(l, l);
        for s in summaries {
            let cov = s
                .cov
                .as_ref()
                .ok_or_else(|| DucError::Schema(format!("summary {} has no covariance", s.source_id)))?;
            scatter += cov * (s.n.saturating_sub(1)) as f64;
            let d = &s.means - &center;
            scatter += &d * d.transpose() * s.n as f64;
        }
        let cov = scatter / (total.max(2) - 1) as f64;
        Self::from_moments(default_names(l), center, cov)
    }

    pub fn from_moments(names: Vec<String>, center: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let l = center.len();
        if cov.nrows() != l || cov.ncols() != l || names.len() != l {
            return Err(DucError::dim("whitener moments disagree on dimension"));
        }
        let eps = WHITEN_RIDGE * cov.trace().abs() / l as f64;
        let constant: Vec<String> =
            (0..l).filter(|&i| !(cov[(i, i)] > eps)).map(|i| names[i].clone()).collect();
        if !constant.is_empty() {
            return Err(DucError::DegenerateCovariance { columns: constant });
        }
        let mut ridged = cov.clone();
        for i in 0..l {
            ridged[(i, i)] += eps;
        }
        let chol = match nalgebra::Cholesky::new(ridged.clone()) {
            Some(c) => c,
            None => {
                let bad = (0..l).filter(|&i| cov[(i, i)] <= 0.0).collect::<Vec<_>>();
                let bad = if bad.is_empty() { (0..l).collect() } else { bad };
                return Err(DucError::DegenerateCovariance {
                    columns: bad.iter().map(|&i| names[i].clone()).collect(),
                });
            }
        };
        let factor = chol.l();
        let offending = collinear_columns(&factor, &ridged);
        if !offending.is_empty() {
            return Err(DucError::DegenerateCovariance {
                columns: offending.iter().map(|&i| names[i].clone()).collect(),
            });
        }
        Ok(Self { names, center, factor })
    }

    pub fn transform_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        let d = x - &self.center;
        self.factor.solve_lower_triangular(&d).expect("whitening factor has a nonzero diagonal")
    }

    /// Whiten every row of an `n x L` matrix.
    pub fn transform_rows(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut centered = x.transpose();
        for mut col in centered.column_iter_mut() {
            col -= &self.center;
        }
        self.factor
            .solve_lower_triangular(&centered)
            .expect("whitening factor has a nonzero diagonal")
            .transpose()
    }

    pub fn transform(&self, data: &Dataset) -> Result<Dataset> {
        self.check_dim(data.n_covariates())?;
        Dataset::new(data.names.clone(), self.transform_rows(&data.x), data.y.clone())
    }

    fn check_dim(&self, l: usize) -> Result<()> {
        if l != self.dim() {
            return Err(DucError::dim(format!("whitener expects {} covariates, data has {l}", self.dim())));
        }
        Ok(())
    }
}

/// Columns whose pivot shows they are (nearly) a combination of earlier ones,
/// together with the earlier columns they depend on.
fn collinear_columns(factor: &DMatrix<f64>, cov: &DMatrix<f64>) -> Vec<usize> {
    let l = factor.nrows();
    let mut out = Vec::new();
    for i in 0..l {
        let pivot = factor[(i, i)] * factor[(i, i)];
        if pivot > PIVOT_TOLERANCE * cov[(i, i)] {
            continue;
        }
        if i > 0 {
            // Regression coefficients of column i on columns 0..i.
            let l11 = factor.view((0, 0), (i, i)).into_owned();
            let li = factor.view((i, 0), (1, i)).transpose();
            if let Some(b) = l11.transpose().solve_upper_triangular(&li) {
                let sd_i = cov[(i, i)].sqrt();
                for (j, bj) in b.iter().enumerate() {
                    if (bj * cov[(j, j)].sqrt()).abs() > 1e-6 * sd_i && !out.contains(&j) {
                        out.push(j);
                    }
                }
            }
        }
        out.push(i);
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Summary of a dataset after whitening.
pub fn summarize(source_id: &str, data: &Dataset, whitener: &Whitener) -> Result<SourceSummary> {
    if data.is_empty() {
        return Err(DucError::EmptyDataset(format!("source {source_id} has no rows")));
    }
    whitener.check_dim(data.n_covariates())?;
    let xw = whitener.transform_rows(&data.x);
    let cov = (data.n_rows() > 1).then(|| sample_covariance(&xw));
    SourceSummary::new(source_id, column_means(&xw), data.n_rows(), cov)
}

/// Summary of raw (unwhitened) covariates.
pub fn summarize_raw(source_id: &str, data: &Dataset) -> Result<SourceSummary> {
    if data.is_empty() {
        return Err(DucError::EmptyDataset(format!("source {source_id} has no rows")));
    }
    let cov = (data.n_rows() > 1).then(|| sample_covariance(&data.x));
    SourceSummary::new(source_id, column_means(&data.x), data.n_rows(), cov)
}

/// The `L x (K+1)` matrix of columns `Z^(1), ..., Z^(K+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ZMatrix {
    matrix: DMatrix<f64>,
}

impl ZMatrix {
    /// Requires `L > K`, where the matrix has `K + 1` columns.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() < 2 {
            return Err(DucError::dim("Z needs the target column and at least one source"));
        }
        let (l, k) = (matrix.nrows(), matrix.ncols() - 1);
        if l <= k {
            return Err(DucError::TooFewCovariates { covariates: l, sources: k });
        }
        Ok(Self { matrix })
    }

    pub fn from_columns(columns: &[DVector<f64>]) -> Result<Self> {
        if columns.is_empty() {
            return Err(DucError::dim("no Z columns"));
        }
        let l = columns[0].len();
        if columns.iter().any(|c| c.len() != l) {
            return Err(DucError::dim("Z columns differ in length"));
        }
        Self::new(DMatrix::from_columns(columns))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Number of covariates.
    pub fn l(&self) -> usize {
        self.matrix.nrows()
    }

    /// Number of sources other than the candidate (target included).
    pub fn k(&self) -> usize {
        self.matrix.ncols() - 1
    }

    /// Column `k`, 0-based: column 0 is `Z^(1)`, column `K` is the candidate.
    pub fn column(&self, k: usize) -> DVector<f64> {
        self.matrix.column(k).into_owned()
    }
}

/// `Z^(1) = E_1[X] - Ê_1[X]` and `Z^(k) = Ê_k[X] - Ê_1[X]`, keeping source order.
pub fn build_z(
    target: &TargetMoments,
    target_summary: &SourceSummary,
    sources: &[&SourceSummary],
) -> Result<ZMatrix> {
    let l = target_summary.dim();
    if target.means.len() != l {
        return Err(DucError::dim(format!(
            "target moments have {} covariates, target summary has {l}",
            target.means.len()
        )));
    }
    let e1_hat = &target_summary.means;
    let mut cols = Vec::with_capacity(sources.len() + 1);
    cols.push(target.vector() - e1_hat);
    for s in sources {
        if s.dim() != l {
            return Err(DucError::dim(format!(
                "source {} has {} covariates, expected {l}",
                s.source_id,
                s.dim()
            )));
        }
        cols.push(&s.means - e1_hat);
    }
    let k = sources.len();
    if l <= k {
        return Err(DucError::TooFewCovariates { covariates: l, sources: k });
    }
    ZMatrix::from_columns(&cols)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs_diff;
    use crate::seeding::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, l: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = rng_from_seed(seed);
        DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng))
    }

    fn summary(id: &str, means: &[f64], n: usize) -> SourceSummary {
        SourceSummary::new(id, DVector::from_row_slice(means), n, None).unwrap()
    }

    #[test]
    fn whitened_pooled_data_has_identity_covariance() {
        let mut x = gaussian(500, 4, 1);
        for i in 0..500 {
            x[(i, 1)] += 2.0 * x[(i, 0)] + 3.0;
            x[(i, 3)] = 0.5 * x[(i, 3)] - x[(i, 2)];
        }
        let d = Dataset::from_covariates(x);
        let w = Whitener::fit(&d).unwrap();
        let xw = w.transform_rows(&d.x);
        let cov = sample_covariance(&xw);
        assert!(max_abs_diff(&cov, &DMatrix::identity(4, 4)) < 1e-6);
        assert!(column_means(&xw).amax() < 1e-10);
    }

    #[test]
    fn identity_moments_give_identity_factor() {
        let w = Whitener::from_moments(default_names(3), DVector::zeros(3), DMatrix::identity(3, 3)).unwrap();
        assert!(max_abs_diff(&w.factor, &DMatrix::identity(3, 3)) < 1e-6);
    }

    #[test]
    fn scaled_gaussian_is_rescaled() {
        let mut x = gaussian(10_000, 2, 2);
        x.column_mut(0).scale_mut(2.0);
        let d = Dataset::from_covariates(x);
        let w = Whitener::fit(&d).unwrap();
        let cov = sample_covariance(&w.transform_rows(&d.x));
        assert!((cov[(0, 0)] - 1.0).abs() < 1e-2 && (cov[(1, 1)] - 1.0).abs() < 1e-2);
    }

    #[test]
    fn collinear_pair_is_degenerate_and_named() {
        let mut x = gaussian(200, 3, 3);
        for i in 0..200 {
            x[(i, 2)] = 3.0 * x[(i, 1)];
        }
        let d = Dataset::from_covariates(x);
        match Whitener::fit(&d) {
            Err(DucError::DegenerateCovariance { columns }) => {
                assert_eq!(columns, vec!["x2".to_string(), "x3".to_string()]);
            }
            other => panic!("expected degenerate covariance, got {other:?}"),
        }
    }

    #[test]
    fn constant_column_is_degenerate() {
        let mut x = gaussian(50, 2, 4);
        x.column_mut(1).fill(5.0);
        assert!(matches!(
            Whitener::fit(&Dataset::from_covariates(x)),
            Err(DucError::DegenerateCovariance { .. })
        ));
    }

    #[test]
    fn summary_of_single_row() {
        let x = DMatrix::from_row_slice(1, 2, &[1.5, -2.0]);
        let d = Dataset::from_covariates(x);
        let s = summarize("a", &d, &Whitener::identity(2)).unwrap();
        assert_eq!(s.n, 1);
        assert_eq!(s.means.as_slice(), &[1.5, -2.0]);
    }

    #[test]
    fn summary_is_permutation_invariant_and_additive() {
        let a = Dataset::from_covariates(gaussian(30, 3, 5));
        let b = Dataset::from_covariates(gaussian(70, 3, 6));
        let w = Whitener::fit_pooled(&[&a, &b]).unwrap();
        let rev: Vec<usize> = (0..30).rev().collect();
        let sa = summarize("a", &a, &w).unwrap();
        let sa_perm = summarize("a", &a.select_rows(&rev), &w).unwrap();
        assert!((sa.means.clone() - sa_perm.means).amax() < 1e-12);
        let sb = summarize("b", &b, &w).unwrap();
        let sab = summarize("ab", &Dataset::concat(&[&a, &b]).unwrap(), &w).unwrap();
        let mix = (sa.means * 30.0 + sb.means * 70.0) / 100.0;
        assert!((sab.means - mix).amax() < 1e-12);
    }

    #[test]
    fn pooled_summary_whitener_matches_row_whitener() {
        let a = Dataset::from_covariates(gaussian(40, 3, 7));
        let mut bx = gaussian(60, 3, 8);
        bx.add_scalar_mut(0.7);
        let b = Dataset::from_covariates(bx);
        let from_rows = Whitener::fit_pooled(&[&a, &b]).unwrap();
        let sa = summarize_raw("a", &a).unwrap();
        let sb = summarize_raw("b", &b).unwrap();
        let from_sums = Whitener::from_summaries(&[&sa, &sb]).unwrap();
        assert!(max_abs_diff(&from_rows.factor, &from_sums.factor) < 1e-10);
        assert!((from_rows.center - from_sums.center).amax() < 1e-12);
    }

    #[test]
    fn z_columns_follow_definition() {
        let target = TargetMoments { means: vec![1.0, 2.0, 3.0], known_exactly: true };
        let t = summary("t", &[0.5, 2.5, 3.0], 10);
        let s2 = summary("s2", &[1.0, 1.0, 1.0], 20);
        let s3 = summary("s3", &[0.5, 2.5, 3.0], 20);
        let z = build_z(&target, &t, &[&s2, &s3]).unwrap();
        assert_eq!(z.column(0).as_slice(), &[0.5, -0.5, 0.0]);
        assert_eq!(z.column(1).as_slice(), &[0.5, -1.5, -2.0]);
        assert_eq!(z.column(2).as_slice(), &[0.0, 0.0, 0.0]);
        assert_eq!(z.k(), 2);
        assert_eq!(z.l(), 3);
    }

    #[test]
    fn exact_target_sample_gives_zero_first_column() {
        let target = TargetMoments { means: vec![0.2, 0.3], known_exactly: true };
        let t = summary("t", &[0.2, 0.3], 10);
        let s = summary("s", &[0.0, 1.0], 5);
        let z = build_z(&target, &t, &[&s]).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_few_covariates_is_rejected() {
        let target = TargetMoments { means: vec![0.0, 0.0], known_exactly: true };
        let t = summary("t", &[0.0, 0.0], 10);
        let s = summary("s", &[1.0, 0.0], 5);
        assert!(matches!(
            build_z(&target, &t, &[&s, &s]),
            Err(DucError::TooFewCovariates { covariates: 2, sources: 2 })
        ));
    }

    #[test]
    fn record_round_trip() {
        let s = SourceSummary::new(
            "s",
            DVector::from_row_slice(&[1.0, 2.0]),
            4,
            Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0])),
        )
        .unwrap();
        let json = serde_json::to_string(&s.to_record()).unwrap();
        let back: SummaryRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(SourceSummary::from_record(&back).unwrap(), s);
    }

    #[test]
    fn asymmetric_covariance_is_rejected() {
        let bad = SourceSummary::new(
            "s",
            DVector::from_row_slice(&[1.0, 2.0]),
            4,
            Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 2.0])),
        );
        assert!(bad.is_err());
    }
}
