//! Sampling from a perturbed distribution `P_k`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::data::Dataset;
use crate::error::{DucError, Result};
use crate::seeding::{rng_from_seed, SimRng};
use crate::stats::normal_quantile;

/// The map `h` from a uniform draw on `[0, 1]` to a `(covariates, outcome)` pair.
pub trait BaseTransform: Send + Sync {
    fn names(&self) -> Vec<String>;

    /// Write the covariates of `h(u)` into `x` and return the outcome.
    fn apply(&self, u: f64, x: &mut [f64]) -> f64;

    fn dim(&self) -> usize {
        self.names().len()
    }
}

/// One-dimensional `h(u) = (Phi^-1(u), Phi^-1(u))`, handy for checking region frequencies.
#[derive(Debug, Clone, Copy, Default)]
pub struct GaussianQuantile;

impl BaseTransform for GaussianQuantile {
    fn names(&self) -> Vec<String> {
        vec!["x1".into()]
    }

    fn apply(&self, u: f64, x: &mut [f64]) -> f64 {
        let z = normal_quantile(u.clamp(1e-16, 1.0 - 1e-16)).unwrap_or(0.0);
        x[0] = z;
        z
    }

    fn dim(&self) -> usize {
        1
    }
}

#[derive(Clone)]
pub struct PerturbedSource {
    pub weights: Vec<f64>,
    pub transform: Arc<dyn BaseTransform>,
    pub seed: u64,
}

impl std::fmt::Debug for PerturbedSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PerturbedSource").field("m", &self.weights.len()).field("seed", &self.seed).finish()
    }
}

impl PerturbedSource {
    pub fn new(weights: Vec<f64>, transform: Arc<dyn BaseTransform>, seed: u64) -> Result<Self> {
        validate_weights(&weights)?;
        Ok(Self { weights, transform, seed })
    }
}

fn validate_weights(w: &[f64]) -> Result<()> {
    if w.len() < 2 {
        return Err(DucError::param(format!("need at least 2 regions, got {}", w.len())));
    }
    if let Some(bad) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(DucError::param(format!("region weight {bad} is not positive")));
    }
    Ok(())
}

/// Draws region indices with probability proportional to the weights.
#[derive(Debug, Clone)]
pub struct RegionSampler {
    cumulative: Vec<f64>,
}

impl RegionSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        validate_weights(weights)?;
        let mut acc = 0.0;
        let cumulative = weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Ok(Self { cumulative })
    }

    pub fn m(&self) -> usize {
        self.cumulative.len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let r = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= r).min(self.m() - 1)
    }

    /// A uniform draw on `[0, 1]` from the perturbed law of `U`.
    pub fn sample_u<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let j = self.sample(rng);
        let inner: f64 = rng.random();
        (j as f64 + inner) / self.m() as f64
    }
}

/// `n` rows from the perturbed source, using its own seed.
pub fn sample_perturbed(src: &PerturbedSource, n: usize) -> Result<Dataset> {
    let mut rng = rng_from_seed(src.seed);
    sample_with_rng(&src.weights, src.transform.as_ref(), n, &mut rng)
}

pub fn sample_with_rng(
    weights: &[f64],
    transform: &dyn BaseTransform,
    n: usize,
    rng: &mut SimRng,
) -> Result<Dataset> {
    if n == 0 {
        return Err(DucError::EmptyDataset("requested 0 rows".into()));
    }
    let sampler = RegionSampler::new(weights)?;
    let p = transform.dim();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        let u = sampler.sample_u(rng);
        y[i] = transform.apply(u, &mut row);
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
    }
    Dataset::new(transform.names(), x, Some(y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn region_counts(weights: &[f64], n: usize, seed: u64) -> Vec<usize> {
        let s = RegionSampler::new(weights).unwrap();
        let mut rng = rng_from_seed(seed);
        let mut counts = vec![0; weights.len()];
        for _ in 0..n {
            counts[s.sample(&mut rng)] += 1;
        }
        counts
    }

    fn chi_square_p(counts: &[usize], weights: &[f64]) -> f64 {
        let n: usize = counts.iter().sum();
        let total: f64 = weights.iter().sum();
        let stat: f64 = counts
            .iter()
            .zip(weights)
            .map(|(&c, &w)| {
                let e = n as f64 * w / total;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
    }

    #[test]
    fn equal_weights_give_uniform_regions() {
        let w = vec![1.0; 20];
        let counts = region_counts(&w, 100_000, 1);
        assert!(chi_square_p(&counts, &w) > 0.001);
    }

    #[test]
    fn doubled_region_has_doubled_frequency() {
        let m = 10;
        let mut w = vec![1.0; m];
        w[0] = 2.0;
        let n = 100_000;
        let counts = region_counts(&w, n, 2);
        let p = 2.0 / (m as f64 + 1.0);
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((counts[0] as f64 / n as f64 - p).abs() < 4.0 * se);
        assert!(chi_square_p(&counts, &w) > 0.001);
    }

    #[test]
    fn same_seed_same_dataset() {
        let w: Vec<f64> = (0..8).map(|j| 0.5 + j as f64 * 0.1).collect();
        let src = PerturbedSource::new(w, Arc::new(GaussianQuantile), 99).unwrap();
        assert_eq!(sample_perturbed(&src, 500).unwrap(), sample_perturbed(&src, 500).unwrap());
    }

    #[test]
    fn zero_rows_is_an_error() {
        let src = PerturbedSource::new(vec![1.0, 1.0], Arc::new(GaussianQuantile), 1).unwrap();
        assert!(matches!(sample_perturbed(&src, 0), Err(DucError::EmptyDataset(_))));
    }

    #[test]
    fn uniform_draw_stays_in_chosen_region() {
        let w = vec![0.0001, 1.0];
        let s = RegionSampler::new(&w).unwrap();
        let mut rng = rng_from_seed(3);
        let above = (0..1000).filter(|_| s.sample_u(&mut rng) >= 0.5).count();
        assert!(above > 990);
    }
}
