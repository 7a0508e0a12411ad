//! Synthetic multi-source regression tasks.
//!
//! The base distribution `P_f` is a finite pool of `m * atoms_per_region`
//! atoms, each drawn once from the product of the configured covariate
//! marginals. Region `I_j` holds a contiguous block of atoms, so
//! `h(u) = atom(floor(u * m * atoms_per_region))`. Every coordinate of every
//! atom comes from inverse-CDF sampling of a keyed uniform, which makes the pool
//! a pure function of `(config, master_seed)`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::source::{sample_with_rng, BaseTransform};
use super::weights::{
    draw_source_weights, true_weight_cov, PartitionSpec, SharedComponent, WeightFamily, WeightLaw,
};
use crate::data::Dataset;
use crate::duc::WeightCov;
use crate::error::{DucError, Result};
use crate::seeding::{derive_seed, keyed_uniform, rng_from_seed};
use crate::stats::normal_quantile;

/// Marginal law of one covariate (or of the noise) under `P_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "kebab-case")]
pub enum Marginal {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Uniform { low: f64, high: f64 },
}

impl Marginal {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Marginal::Bernoulli { p } => (0.0..=1.0).contains(&p),
            Marginal::Normal { mean, sd } => mean.is_finite() && sd.is_finite() && sd > 0.0,
            Marginal::Uniform { low, high } => low.is_finite() && high.is_finite() && low < high,
        };
        if ok {
            Ok(())
        } else {
            Err(DucError::param(format!("invalid marginal {self:?}")))
        }
    }

    pub fn quantile(&self, u: f64) -> f64 {
        match *self {
            Marginal::Bernoulli { p } => {
                if u >= 1.0 - p {
                    1.0
                } else {
                    0.0
                }
            }
            Marginal::Normal { mean, sd } => mean + sd * normal_quantile(u).unwrap_or(0.0),
            Marginal::Uniform { low, high } => low + (high - low) * u,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    #[serde(flatten)]
    pub marginal: Marginal,
}

/// `y = sum of linear covariates + sum of squared covariates + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeSpec {
    #[serde(default)]
    pub squared: Vec<String>,
    pub noise: Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedGroupSpec {
    pub law: WeightLaw,
    /// Loading of each member source on the shared component.
    pub lambda: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskConfig {
    pub covariates: Vec<CovariateSpec>,
    pub outcome: OutcomeSpec,
    /// Number of equal-probability regions `m`.
    pub regions: usize,
    #[serde(default = "one")]
    pub atoms_per_region: usize,
    pub target: String,
    #[serde(default)]
    pub existing: Vec<String>,
    pub candidates: Vec<String>,
    pub weight_laws: BTreeMap<String, WeightLaw>,
    pub sample_sizes: BTreeMap<String, usize>,
    #[serde(default)]
    pub shared_lambda: BTreeMap<String, SharedGroupSpec>,
    #[serde(default = "default_test_n")]
    pub test_n: usize,
    pub master_seed: u64,
}

fn one() -> usize {
    1
}

fn default_test_n() -> usize {
    20_000
}

impl TaskConfig {
    /// Thirty covariates (15 Bernoulli(0.5), 15 standard normal), outcome
    /// `sum x_j + x16^2 + x17^2 + eps` with `eps ~ Uniform(-1, 1)`, a 300-row
    /// unshifted target, one 400-row shifted source and 15 candidates at sizes
    /// 150 to 2400 in three shift rows: unshifted, independently shifted with
    /// variance 0.8, and sharing the existing source's perturbation.
    pub fn standard() -> Self {
        let mut covariates = Vec::new();
        for j in 1..=15 {
            covariates
                .push(CovariateSpec { name: format!("x{j}"), marginal: Marginal::Bernoulli { p: 0.5 } });
        }
        for j in 16..=30 {
            covariates.push(CovariateSpec {
                name: format!("x{j}"),
                marginal: Marginal::Normal { mean: 0.0, sd: 1.0 },
            });
        }
        let law =
            |v: f64| WeightLaw { family: WeightFamily::ShiftedExponential, variance: v, lower_bound: 0.05 };
        let mut weight_laws = BTreeMap::new();
        let mut sample_sizes = BTreeMap::new();
        weight_laws.insert("target".to_string(), law(0.0));
        sample_sizes.insert("target".to_string(), 300);
        weight_laws.insert("source2".to_string(), law(0.5));
        sample_sizes.insert("source2".to_string(), 400);
        let mut candidates = Vec::new();
        let mut linked = BTreeMap::new();
        linked.insert("source2".to_string(), 1.0);
        let mut idx = 1;
        for row in 0..3 {
            for &n in &[150usize, 300, 600, 1200, 2400] {
                let id = format!("cand{idx:02}");
                let v = match row {
                    0 => 0.0,
                    1 => 0.8,
                    _ => {
                        linked.insert(id.clone(), 1.0);
                        0.5
                    }
                };
                weight_laws.insert(id.clone(), law(v));
                sample_sizes.insert(id.clone(), n);
                candidates.push(id);
                idx += 1;
            }
        }
        let mut shared_lambda = BTreeMap::new();
        shared_lambda.insert("source2-shift".to_string(), SharedGroupSpec { law: law(0.5), lambda: linked });
        Self {
            covariates,
            outcome: OutcomeSpec {
                squared: vec!["x16".into(), "x17".into()],
                noise: Marginal::Uniform { low: -1.0, high: 1.0 },
            },
            regions: 500,
            atoms_per_region: 1,
            target: "target".into(),
            existing: vec!["source2".into()],
            candidates,
            weight_laws,
            sample_sizes,
            shared_lambda,
            test_n: default_test_n(),
            master_seed: 20_240_601,
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| DucError::Schema(format!("task config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Source ids in model order: target, existing sources, candidates.
    pub fn source_ids(&self) -> Vec<String> {
        std::iter::once(self.target.clone())
            .chain(self.existing.iter().cloned())
            .chain(self.candidates.iter().cloned())
            .collect()
    }

    pub fn covariate_names(&self) -> Vec<String> {
        self.covariates.iter().map(|c| c.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.covariates.is_empty() {
            return Err(DucError::Schema("task has no covariates".into()));
        }
        let mut names = BTreeSet::new();
        for c in &self.covariates {
            c.marginal.validate()?;
            if !names.insert(c.name.as_str()) {
                return Err(DucError::Schema(format!("duplicate covariate {}", c.name)));
            }
        }
        for s in &self.outcome.squared {
            if !names.contains(s.as_str()) {
                return Err(DucError::Schema(format!("squared term {s} is not a covariate")));
            }
        }
        self.outcome.noise.validate()?;
        PartitionSpec::new(self.regions)?;
        if self.atoms_per_region == 0 {
            return Err(DucError::param("atoms_per_region must be positive"));
        }
        if self.candidates.is_empty() {
            return Err(DucError::Schema("task has no candidates".into()));
        }
        let ids = self.source_ids();
        let mut seen = BTreeSet::new();
        for id in &ids {
            if !seen.insert(id.as_str()) {
                return Err(DucError::Schema(format!("duplicate source id {id}")));
            }
            let law = self
                .weight_laws
                .get(id)
                .ok_or_else(|| DucError::Schema(format!("no weight law for source {id}")))?;
            law.validate()?;
            match self.sample_sizes.get(id) {
                Some(&n) if n > 0 => {}
                _ => return Err(DucError::Schema(format!("no positive sample size for {id}"))),
            }
        }
        let mut grouped = BTreeSet::new();
        for (g, spec) in &self.shared_lambda {
            spec.law.validate()?;
            for (id, &l) in &spec.lambda {
                if !seen.contains(id.as_str()) {
                    return Err(DucError::Schema(format!("group {g} refers to unknown source {id}")));
                }
                if !(0.0..=1.0).contains(&l) {
                    return Err(DucError::param(format!("lambda {l} for {id} outside [0, 1]")));
                }
                if !grouped.insert(id.as_str()) {
                    return Err(DucError::Schema(format!("source {id} is in two shared groups")));
                }
            }
        }
        if self.test_n == 0 {
            return Err(DucError::param("test_n must be positive"));
        }
        Ok(())
    }
}

/// Finite atom pool standing in for `P_f`.
#[derive(Debug, Clone)]
pub struct AtomPool {
    pub names: Vec<String>,
    /// `(m * atoms_per_region) x L` covariates.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub noise: DVector<f64>,
    pub regions: usize,
    pub atoms_per_region: usize,
}

impl AtomPool {
    pub fn generate(cfg: &TaskConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let n_atoms = cfg.regions * cfg.atoms_per_region;
        let p = cfg.covariates.len();
        let names = cfg.covariate_names();
        let squared: Vec<bool> = names.iter().map(|n| cfg.outcome.squared.contains(n)).collect();
        let mut x = DMatrix::zeros(n_atoms, p);
        let mut y = DVector::zeros(n_atoms);
        let mut noise = DVector::zeros(n_atoms);
        for a in 0..n_atoms {
            let mut total = 0.0;
            for (c, spec) in cfg.covariates.iter().enumerate() {
                let v = spec.marginal.quantile(keyed_uniform(seed, a as u64, c as u64));
                x[(a, c)] = v;
                total += if squared[c] { v * v } else { v };
            }
            let eps = cfg.outcome.noise.quantile(keyed_uniform(seed, a as u64, p as u64));
            noise[a] = eps;
            y[a] = total + eps;
        }
        Ok(Self { names, x, y, noise, regions: cfg.regions, atoms_per_region: cfg.atoms_per_region })
    }

    pub fn n_atoms(&self) -> usize {
        self.x.nrows()
    }

    /// Probability of each atom under the perturbed law with region weights `w`.
    pub fn atom_probabilities(&self, w: &[f64]) -> Vec<f64> {
        let total: f64 = w.iter().sum();
        let r = self.atoms_per_region as f64;
        (0..self.n_atoms()).map(|a| w[a / self.atoms_per_region] / total / r).collect()
    }

    /// Exact covariate means under the perturbed law.
    pub fn population_means(&self, w: &[f64]) -> DVector<f64> {
        let p = DVector::from_vec(self.atom_probabilities(w));
        self.x.tr_mul(&p)
    }
}

impl BaseTransform for AtomPool {
    fn names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn apply(&self, u: f64, x: &mut [f64]) -> f64 {
        let a = ((u * self.n_atoms() as f64) as usize).min(self.n_atoms() - 1);
        for (j, v) in x.iter_mut().enumerate() {
            *v = self.x[(a, j)];
        }
        self.y[a]
    }

    fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// One realization of every source plus a target test set.
#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub ids: Vec<String>,
    pub target: Dataset,
    pub existing: Vec<Dataset>,
    pub candidates: Vec<Dataset>,
    pub test: Dataset,
    /// Region weights in `ids` order.
    pub weights: Vec<Vec<f64>>,
}

impl SyntheticTask {
    /// Target followed by existing sources.
    pub fn training(&self) -> Vec<&Dataset> {
        std::iter::once(&self.target).chain(self.existing.iter()).collect()
    }

    pub fn dataset_count(&self) -> usize {
        1 + self.existing.len() + self.candidates.len()
    }
}

const POOL_STREAM: u64 = 0x706f_6f6c;
const WEIGHT_STREAM: u64 = 1;
const TEST_STREAM: u64 = 2;
const SOURCE_STREAM: u64 = 1000;

/// A task config with its atom pool built once and shared across trials.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    pub cfg: TaskConfig,
    pub pool: Arc<AtomPool>,
    pub laws: Vec<WeightLaw>,
    pub shared: Vec<SharedComponent>,
}

impl SyntheticWorld {
    pub fn new(cfg: TaskConfig) -> Result<Self> {
        cfg.validate()?;
        let pool = AtomPool::generate(&cfg, derive_seed(cfg.master_seed, POOL_STREAM))?;
        let ids = cfg.source_ids();
        let laws = ids.iter().map(|id| cfg.weight_laws[id]).collect();
        let shared = cfg
            .shared_lambda
            .values()
            .map(|g| SharedComponent {
                law: g.law,
                loadings: g
                    .lambda
                    .iter()
                    .map(|(id, &l)| (ids.iter().position(|x| x == id).unwrap(), l))
                    .collect(),
            })
            .collect();
        Ok(Self { cfg, pool: Arc::new(pool), laws, shared })
    }

    pub fn partition(&self) -> PartitionSpec {
        PartitionSpec { m: self.cfg.regions }
    }

    pub fn sample_sizes(&self) -> Vec<usize> {
        self.cfg.source_ids().iter().map(|id| self.cfg.sample_sizes[id]).collect()
    }

    /// Exact `Sigma^W / m` over all sources in model order.
    pub fn true_weight_cov(&self) -> Result<WeightCov> {
        true_weight_cov(&self.laws, &self.shared, self.partition())
    }

    pub fn draw_weights(&self, seed: u64) -> Result<Vec<Vec<f64>>> {
        draw_source_weights(&self.laws, &self.shared, self.partition(), derive_seed(seed, WEIGHT_STREAM))
    }

    /// Sample `n` rows from the perturbed law with region weights `w`.
    pub fn sample(&self, w: &[f64], n: usize, seed: u64) -> Result<Dataset> {
        let mut rng = rng_from_seed(seed);
        sample_with_rng(w, self.pool.as_ref(), n, &mut rng)
    }

    pub fn draw(&self, seed: u64) -> Result<SyntheticTask> {
        let weights = self.draw_weights(seed)?;
        let sizes = self.sample_sizes();
        let mut sets = weights
            .iter()
            .zip(&sizes)
            .enumerate()
            .map(|(k, (w, &n))| self.sample(w, n, derive_seed(seed, SOURCE_STREAM + k as u64)))
            .collect::<Result<Vec<_>>>()?;
        let test = self.sample(&weights[0], self.cfg.test_n, derive_seed(seed, TEST_STREAM))?;
        let candidates = sets.split_off(1 + self.cfg.existing.len());
        let existing = sets.split_off(1);
        let target = sets.pop().unwrap();
        Ok(SyntheticTask { ids: self.cfg.source_ids(), target, existing, candidates, test, weights })
    }
}

/// Build the task for `cfg` and draw one realization with `seed`.
pub fn make_synthetic_task(cfg: &TaskConfig, seed: u64) -> Result<SyntheticTask> {
    SyntheticWorld::new(cfg.clone())?.draw(seed)
}
