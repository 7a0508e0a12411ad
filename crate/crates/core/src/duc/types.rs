use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{DucError, Result};
use crate::linalg::{max_asymmetry, symmetrize};

/// Which quantity the entries of a [`WeightCov`] describe.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightCovForm {
    /// `Cov(W^(k), W^(k'))` over sources, the target first.
    Raw,
    /// `Cov(W^(r) - W^(k), W^(r) - W^(k'))` relative to a reference `r`
    /// that is not among the listed sources.
    Differenced,
}

/// Covariance of distributional weights across sources.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightCov {
    pub matrix: DMatrix<f64>,
    pub form: WeightCovForm,
    /// `true` when entries are `Sigma^W / m` (paired with `c_k = 1 / n_k`).
    pub scaled: bool,
}

impl WeightCov {
    /// Raw weight covariance already divided by `m`.
    pub fn raw_scaled(matrix: DMatrix<f64>) -> Self {
        Self { matrix, form: WeightCovForm::Raw, scaled: true }
    }

    /// Raw `Sigma^W` in limit form (paired with `c_k = m / n_k`).
    pub fn raw_unscaled(matrix: DMatrix<f64>) -> Self {
        Self { matrix, form: WeightCovForm::Raw, scaled: false }
    }

    pub fn differenced_scaled(matrix: DMatrix<f64>) -> Self {
        Self { matrix, form: WeightCovForm::Differenced, scaled: true }
    }

    /// Divide limit-form entries by `m`.
    pub fn per_region(mut self, m: usize) -> Self {
        if !self.scaled {
            self.matrix /= m as f64;
            self.scaled = true;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.matrix;
        if m.nrows() != m.ncols() || m.nrows() == 0 {
            return Err(DucError::dim(format!("weight covariance is {}x{}", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(DucError::param("weight covariance has non-finite entries"));
        }
        let scale = m.amax().max(1.0);
        if max_asymmetry(m) > 1e-10 * scale {
            return Err(DucError::param("weight covariance is not symmetric"));
        }
        if m.diagonal().iter().any(|&d| d < 0.0) {
            return Err(DucError::param("weight covariance has a negative variance"));
        }
        Ok(())
    }

    /// Leading `k x k` block.
    pub fn leading(&self, k: usize) -> Self {
        Self { matrix: self.matrix.view((0, 0), (k, k)).into_owned(), form: self.form, scaled: self.scaled }
    }

    /// Differenced covariance of the other sources relative to source `r`.
    pub fn relative_to(&self, r: usize) -> Result<Self> {
        if self.form != WeightCovForm::Raw {
            return Err(DucError::param("relative_to needs a raw weight covariance"));
        }
        let k = self.dim();
        if r >= k {
            return Err(DucError::dim(format!("reference {r} out of range for {k} sources")));
        }
        let others: Vec<usize> = (0..k).filter(|&i| i != r).collect();
        let s = &self.matrix;
        let mut out = DMatrix::from_fn(others.len(), others.len(), |a, b| {
            let (i, j) = (others[a], others[b]);
            s[(r, r)] + s[(i, j)] - s[(r, i)] - s[(r, j)]
        });
        symmetrize(&mut out);
        Ok(Self { matrix: out, form: WeightCovForm::Differenced, scaled: self.scaled })
    }
}

/// Sampling-to-shift ratios `c_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct CRatios {
    pub c: DVector<f64>,
    /// `true` for `c_k = 1 / n_k`, `false` for `c_k = m / n_k`.
    pub scaled: bool,
}

impl CRatios {
    pub fn new(c: DVector<f64>, scaled: bool) -> Result<Self> {
        if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(DucError::param("c ratios must be finite and nonnegative"));
        }
        Ok(Self { c, scaled })
    }

    /// `c_k = 1 / n_k`.
    pub fn from_sizes(n: &[f64]) -> Result<Self> {
        if n.iter().any(|v| !(*v > 0.0)) {
            return Err(DucError::param("sample sizes must be positive"));
        }
        Self::new(DVector::from_iterator(n.len(), n.iter().map(|v| 1.0 / v)), true)
    }

    /// `c_k = m / n_k`.
    pub fn limit_form(m: usize, n: &[f64]) -> Result<Self> {
        let mut c = Self::from_sizes(n)?;
        c.c *= m as f64;
        c.scaled = false;
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn head(&self, k: usize) -> Self {
        Self { c: self.c.rows(0, k).into_owned(), scaled: self.scaled }
    }
}

/// `Sigma^K = A Sigma^W A^T + diag(c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CombinedCov {
    pub matrix: DMatrix<f64>,
    /// The `c` used to build it, when known.
    pub c: Option<DVector<f64>>,
}

impl CombinedCov {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() || matrix.nrows() == 0 {
            return Err(DucError::dim("combined covariance must be square and nonempty"));
        }
        Ok(Self { matrix, c: None })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Leading block over the first `k` sources.
    pub fn leading(&self, k: usize) -> Self {
        Self {
            matrix: self.matrix.view((0, 0), (k, k)).into_owned(),
            c: self.c.as_ref().map(|c| c.rows(0, k).into_owned()),
        }
    }

    /// Strip `diag(c)` from sources `2..` and return the differenced weight
    /// covariance of those sources relative to the target. Negative variances
    /// are floored at zero with a warning.
    pub fn weight_part(&self, c: &CRatios) -> Result<WeightCov> {
        let k = self.dim();
        if c.len() != k {
            return Err(DucError::dim(format!("{} c ratios for {k} sources", c.len())));
        }
        let mut d = self.matrix.view((1, 1), (k - 1, k - 1)).into_owned();
        for i in 0..k - 1 {
            d[(i, i)] -= c.c[i + 1];
            if d[(i, i)] < 0.0 {
                log::warn!("estimated weight variance {:.3e} floored at 0", d[(i, i)]);
                d[(i, i)] = 0.0;
            }
        }
        Ok(WeightCov { matrix: d, form: WeightCovForm::Differenced, scaled: c.scaled })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DucMethod {
    EmpiricalPartialCorrelation,
    PopulationFormula,
    IndependentWeightsFormula,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DucEstimate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    pub rho2: f64,
    pub ci: [f64; 2],
    #[serde(rename = "L")]
    pub l: Option<usize>,
    pub alpha: Option<f64>,
    pub method: DucMethod,
    pub trials: usize,
}

impl DucEstimate {
    /// Point value with a degenerate interval.
    pub fn point(rho2: f64, method: DucMethod) -> Self {
        let r = rho2.clamp(0.0, 1.0);
        Self { source_id: None, rho2: r, ci: [r, r], l: None, alpha: None, method, trials: 1 }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.source_id = Some(id.into());
        self
    }
}

/// Which weight the `beta` combination approximates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApproxTarget {
    /// `beta*`, approximating the target weight `W^(1)`.
    Target,
    /// `beta'`, approximating the candidate weight `W^(K+1)`.
    Candidate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceWeights {
    pub beta: DVector<f64>,
    pub target_of_approx: ApproxTarget,
}

impl SourceWeights {
    pub fn sum(&self) -> f64 {
        self.beta.sum()
    }

    pub fn as_vec(&self) -> Vec<f64> {
        self.beta.iter().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_to_matches_difference_covariance() {
        let s = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.1, 0.2, 2.0, 0.3, 0.1, 0.3, 3.0]);
        let d = WeightCov::raw_scaled(s).relative_to(0).unwrap();
        // Var(W1 - W2) = 1 + 2 - 0.4, Cov(W1 - W2, W1 - W3) = 1 + 0.3 - 0.2 - 0.1.
        assert!((d.matrix[(0, 0)] - 2.6).abs() < 1e-15);
        assert!((d.matrix[(0, 1)] - 1.0).abs() < 1e-15);
        assert!((d.matrix[(1, 1)] - 3.8).abs() < 1e-15);
        assert_eq!(d.form, WeightCovForm::Differenced);
    }

    #[test]
    fn estimate_serializes_with_expected_keys() {
        let e = DucEstimate::point(0.25, DucMethod::PopulationFormula).with_id("a");
        let v = serde_json::to_value(&e).unwrap();
        assert_eq!(v["source_id"], "a");
        assert_eq!(v["ci"][1], 0.25);
        assert!(v.get("L").is_some());
        assert_eq!(v["method"], "population-formula");
    }

    #[test]
    fn c_ratio_forms() {
        let c = CRatios::from_sizes(&[100.0, 50.0]).unwrap();
        assert_eq!(c.c.as_slice(), &[0.01, 0.02]);
        let cl = CRatios::limit_form(10, &[100.0, 50.0]).unwrap();
        assert!(!cl.scaled);
        assert!((cl.c[1] - 0.2).abs() < 1e-15);
        assert!(CRatios::from_sizes(&[0.0]).is_err());
    }
}
