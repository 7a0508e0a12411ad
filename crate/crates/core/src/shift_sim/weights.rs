//! Region weight laws and weight-vector draws.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::duc::WeightCov;
use crate::error::{DucError, Result};
use crate::seeding::{derive_seed, rng_from_seed};

use nalgebra::DMatrix;

const LAW_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightFamily {
    /// `(1 - sqrt(v)) + sqrt(v) * Exp(1)`.
    ShiftedExponential,
    /// Mass on `lower_bound` and on `1 + v / (1 - lower_bound)`.
    TwoPoint,
    /// `Uniform(1 - h, 1 + h)` with `h = sqrt(3 v)`.
    UniformAroundOne,
}

/// Mean-one positive law for the region weights `W_j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightLaw {
    pub family: WeightFamily,
    /// `Var(W)` before the `1/m` scaling.
    pub variance: f64,
    /// Every draw is at least this value.
    #[serde(default = "default_lower_bound")]
    pub lower_bound: f64,
}

fn default_lower_bound() -> f64 {
    0.05
}

impl WeightLaw {
    pub fn new(family: WeightFamily, variance: f64, lower_bound: f64) -> Result<Self> {
        let law = Self { family, variance, lower_bound };
        law.validate()?;
        Ok(law)
    }

    pub fn shifted_exponential(variance: f64) -> Result<Self> {
        Self::new(WeightFamily::ShiftedExponential, variance, default_lower_bound())
    }

    /// The law of `W = 1`.
    pub fn degenerate() -> Self {
        Self { family: WeightFamily::ShiftedExponential, variance: 0.0, lower_bound: default_lower_bound() }
    }

    pub fn validate(&self) -> Result<()> {
        let (v, lb) = (self.variance, self.lower_bound);
        if !v.is_finite() || v < 0.0 {
            return Err(DucError::param(format!("weight variance must be >= 0, got {v}")));
        }
        if !lb.is_finite() || lb <= 0.0 {
            return Err(DucError::param(format!("weight lower bound must be > 0, got {lb}")));
        }
        if lb > 1.0 {
            return Err(DucError::param(format!("weight lower bound {lb} exceeds the mean of 1")));
        }
        if v == 0.0 {
            return Ok(());
        }
        if self.family == WeightFamily::TwoPoint && lb >= 1.0 {
            return Err(DucError::param("two-point law with positive variance needs lower bound < 1"));
        }
        if self.support_min() < lb - LAW_TOL {
            return Err(DucError::param(format!(
                "{:?} law with variance {v} reaches {:.4}, below lower bound {lb}",
                self.family,
                self.support_min()
            )));
        }
        Ok(())
    }

    /// Infimum of the support.
    pub fn support_min(&self) -> f64 {
        let v = self.variance;
        if v == 0.0 {
            return 1.0;
        }
        match self.family {
            WeightFamily::ShiftedExponential => 1.0 - v.sqrt(),
            WeightFamily::TwoPoint => self.lower_bound,
            WeightFamily::UniformAroundOne => 1.0 - (3.0 * v).sqrt(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let v = self.variance;
        if v == 0.0 {
            return 1.0;
        }
        match self.family {
            WeightFamily::ShiftedExponential => {
                let s = v.sqrt();
                let e: f64 = Exp1.sample(rng);
                (1.0 - s) + s * e
            }
            WeightFamily::TwoPoint => {
                let a = self.lower_bound;
                let b = 1.0 + v / (1.0 - a);
                let p_high = (1.0 - a) / (b - a);
                if rng.random::<f64>() < p_high {
                    b
                } else {
                    a
                }
            }
            WeightFamily::UniformAroundOne => {
                let h = (3.0 * v).sqrt();
                1.0 - h + 2.0 * h * rng.random::<f64>()
            }
        }
    }
}

/// Number of equal-probability regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionSpec {
    pub m: usize,
}

impl PartitionSpec {
    pub fn new(m: usize) -> Result<Self> {
        if m < 2 {
            return Err(DucError::param(format!("need at least 2 regions, got {m}")));
        }
        Ok(Self { m })
    }
}

/// `m` i.i.d. draws from `law`, determined by `seed`.
pub fn draw_weights(law: &WeightLaw, part: PartitionSpec, seed: u64) -> Result<Vec<f64>> {
    law.validate()?;
    PartitionSpec::new(part.m)?;
    let mut rng = rng_from_seed(seed);
    Ok((0..part.m).map(|_| law.sample(&mut rng)).collect())
}

/// A weight component shared by several sources:
/// `W^(k) = (1 - lambda_k) V^(k) + lambda_k V^(shared)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SharedComponent {
    pub law: WeightLaw,
    /// `(source index, lambda)` pairs.
    pub loadings: Vec<(usize, f64)>,
}

fn loading_table(n_sources: usize, shared: &[SharedComponent]) -> Result<Vec<Option<(usize, f64)>>> {
    let mut table = vec![None; n_sources];
    for (g, comp) in shared.iter().enumerate() {
        comp.law.validate()?;
        for &(k, lambda) in &comp.loadings {
            if k >= n_sources {
                return Err(DucError::param(format!("shared component refers to source {k}")));
            }
            if !(0.0..=1.0).contains(&lambda) {
                return Err(DucError::param(format!("lambda {lambda} outside [0, 1]")));
            }
            if table[k].is_some() {
                return Err(DucError::param(format!("source {k} belongs to more than one shared component")));
            }
            table[k] = Some((g, lambda));
        }
    }
    Ok(table)
}

const SHARED_STREAM: u64 = 1 << 40;

/// Weight vectors for every source, with optional shared components.
pub fn draw_source_weights(
    laws: &[WeightLaw],
    shared: &[SharedComponent],
    part: PartitionSpec,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let table = loading_table(laws.len(), shared)?;
    let shared_draws = shared
        .iter()
        .enumerate()
        .map(|(g, comp)| draw_weights(&comp.law, part, derive_seed(seed, SHARED_STREAM + g as u64)))
        .collect::<Result<Vec<_>>>()?;
    laws.iter()
        .enumerate()
        .map(|(k, law)| {
            let own = draw_weights(law, part, derive_seed(seed, k as u64))?;
            Ok(match table[k] {
                None => own,
                Some((g, lambda)) => {
                    own.iter().zip(&shared_draws[g]).map(|(v, s)| (1.0 - lambda) * v + lambda * s).collect()
                }
            })
        })
        .collect()
}

/// Exact `Sigma^W / m` implied by per-source laws and shared components.
pub fn true_weight_cov(
    laws: &[WeightLaw],
    shared: &[SharedComponent],
    part: PartitionSpec,
) -> Result<WeightCov> {
    for law in laws {
        law.validate()?;
    }
    let table = loading_table(laws.len(), shared)?;
    let k = laws.len();
    let mut sigma = DMatrix::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            let v = if a == b {
                match table[a] {
                    Some((g, l)) => (1.0 - l).powi(2) * laws[a].variance + l * l * shared[g].law.variance,
                    None => laws[a].variance,
                }
            } else {
                match (table[a], table[b]) {
                    (Some((ga, la)), Some((gb, lb))) if ga == gb => la * lb * shared[ga].law.variance,
                    _ => 0.0,
                }
            };
            sigma[(a, b)] = v;
        }
    }
    Ok(WeightCov::raw_unscaled(sigma).per_region(part.m))
}
