//! Monte Carlo check that the coefficient matches the realised fractional
//! reduction in excess risk.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::{fit_from_stats, GramStats};
use super::risk::RiskEvaluator;
use crate::baselines::kl_gaussian;
use crate::duc::{
    assemble_sigma_k, duc_population, estimate_duc, estimate_weight_cov, optimal_beta_nonneg, CRatios,
    WeightCov,
};
use crate::error::{DucError, Result};
use crate::seeding::{derive_seed, rng_from_seed, trial_seed};
use crate::shift_sim::{SyntheticTask, SyntheticWorld, TaskConfig};
use crate::stats::{mean, mean_abs_deviation, pearson, spearman};
use crate::summaries::{build_z, summarize, SourceSummary, TargetMoments, Whitener};

/// How the source weights of each fit are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum BetaMode {
    /// Nonnegative minimiser of `beta^T Sigma beta` for `Sigma` estimated from covariates.
    #[default]
    Estimated,
    /// Same minimiser for the true `Sigma` of the simulator.
    Oracle,
    /// Simplex grid search scored by k-fold cross-validated target MSE.
    CrossValidated { folds: usize, grid_step: f64 },
}

/// Where excess risk is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RiskMode {
    /// Exact risk under the realised target law of the atom pool.
    #[default]
    Population,
    /// Mean squared error on the drawn target test set.
    TestSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValidationOptions {
    pub trials: usize,
    pub alpha: f64,
    pub seed: u64,
    pub beta: BetaMode,
    pub risk: RiskMode,
    pub ridge: f64,
}

impl Default for ValidationOptions {
    fn default() -> Self {
        Self {
            trials: 200,
            alpha: 0.05,
            seed: 0,
            beta: BetaMode::Estimated,
            risk: RiskMode::Population,
            ridge: 0.0,
        }
    }
}

impl ValidationOptions {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(DucError::param("trials must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(DucError::param(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if !(self.ridge >= 0.0) {
            return Err(DucError::param("ridge must be nonnegative"));
        }
        if let BetaMode::CrossValidated { folds, grid_step } = self.beta {
            if folds < 2 {
                return Err(DucError::param("cross-validation needs at least 2 folds"));
            }
            if !(grid_step > 0.0 && grid_step <= 1.0) {
                return Err(DucError::param("grid step must lie in (0, 1]"));
            }
        }
        Ok(())
    }
}

/// One line of the validation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationRow {
    pub candidate_id: String,
    pub duc: f64,
    pub duc_ci_low: f64,
    pub duc_ci_high: f64,
    pub empirical_fraction: f64,
    pub trials: usize,
}

/// Per-candidate aggregates beyond the plotted table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateDetail {
    pub candidate_id: String,
    pub duc_population: f64,
    pub mean_excess_with: f64,
    pub kl_gaussian: f64,
    pub skipped_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSummary {
    pub trials: usize,
    pub candidates: usize,
    pub mean_excess_without: f64,
    pub pearson: Option<f64>,
    pub spearman: Option<f64>,
    pub mean_abs_deviation: f64,
    /// Spearman correlation of `-KL` with the empirical fraction.
    pub kl_spearman: Option<f64>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub rows: Vec<ValidationRow>,
    pub details: Vec<CandidateDetail>,
    pub summary: ValidationSummary,
}

impl ValidationReport {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct CandidateTrial {
    rho2: f64,
    ci: [f64; 2],
    excess: f64,
    kl: f64,
}

struct TrialOutcome {
    excess_without: f64,
    candidates: Vec<Option<CandidateTrial>>,
}

/// Cached pieces shared by all fits in one trial.
struct TrialContext<'a> {
    world: &'a SyntheticWorld,
    task: SyntheticTask,
    stats: Vec<GramStats>,
    evaluator: RiskEvaluator,
    oracle: DVector<f64>,
    target_moments: TargetMoments,
    summaries: Vec<SourceSummary>,
    opts: &'a ValidationOptions,
    seed: u64,
}

const CV_STREAM: u64 = 7;

impl TrialContext<'_> {
    fn fit(&self, sources: &[usize], beta: &DVector<f64>) -> Result<DVector<f64>> {
        let parts: Vec<(&GramStats, f64)> =
            sources.iter().zip(beta.iter()).map(|(&k, &b)| (&self.stats[k], b)).collect();
        fit_from_stats(&parts, self.opts.ridge, true)
    }

    fn z_for(&self, sources: &[usize]) -> Result<crate::summaries::ZMatrix> {
        let rest: Vec<&SourceSummary> = sources[1..].iter().map(|&k| &self.summaries[k]).collect();
        build_z(&self.target_moments, &self.summaries[0], &rest)
    }

    fn beta(&self, sources: &[usize]) -> Result<DVector<f64>> {
        if sources.len() == 1 {
            return Ok(DVector::from_element(1, 1.0));
        }
        match self.opts.beta {
            BetaMode::Estimated => {
                let cov = estimate_weight_cov(&self.z_for(sources)?)?;
                Ok(optimal_beta_nonneg(&cov)?.beta)
            }
            BetaMode::Oracle => {
                let full = self.world.true_weight_cov()?;
                let sizes = self.world.sample_sizes();
                let m = select(&full.matrix, sources);
                let n: Vec<f64> = sources.iter().map(|&k| sizes[k] as f64).collect();
                let sk = assemble_sigma_k(&WeightCov::raw_scaled(m), &CRatios::from_sizes(&n)?)?;
                Ok(optimal_beta_nonneg(&sk)?.beta)
            }
            BetaMode::CrossValidated { folds, grid_step } => self.cv_beta(sources, folds, grid_step),
        }
    }

    fn cv_beta(&self, sources: &[usize], folds: usize, step: f64) -> Result<DVector<f64>> {
        let grid = simplex_grid(sources.len(), step)?;
        let target = &self.task.target;
        let n = target.n_rows();
        if n < folds {
            return Err(DucError::param(format!("{n} target rows for {folds} folds")));
        }
        let mut order: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(
            &mut order[..],
            &mut rng_from_seed(derive_seed(self.seed, CV_STREAM)),
        );
        let mut scores = vec![0.0; grid.len()];
        for f in 0..folds {
            let held: Vec<usize> = order.iter().skip(f).step_by(folds).cloned().collect();
            let kept: Vec<usize> =
                order.iter().enumerate().filter(|(i, _)| i % folds != f).map(|(_, &r)| r).collect();
            let train = GramStats::new(&target.select_rows(&kept), true)?;
            let eval = RiskEvaluator::from_dataset(&target.select_rows(&held), true)?;
            for (g, beta) in grid.iter().enumerate() {
                let mut parts: Vec<(&GramStats, f64)> = vec![(&train, beta[0])];
                parts
                    .extend(sources[1..].iter().zip(beta.iter().skip(1)).map(|(&k, &b)| (&self.stats[k], b)));
                scores[g] += match fit_from_stats(&parts, self.opts.ridge, true) {
                    Ok(theta) => eval.mse(&theta),
                    Err(_) => f64::INFINITY,
                };
            }
        }
        let best = scores.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap();
        Ok(grid[best].clone())
    }

    fn excess(&self, sources: &[usize]) -> Result<f64> {
        let beta = self.beta(sources)?;
        let theta = self.fit(sources, &beta)?;
        Ok(self.evaluator.excess(&theta, &self.oracle))
    }
}

fn select(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| m[(idx[i], idx[j])])
}

/// Points of the probability simplex in `k` dimensions on a grid of `step`.
fn simplex_grid(k: usize, step: f64) -> Result<Vec<DVector<f64>>> {
    let steps = (1.0 / step).round() as usize;
    if k > 4 || steps.pow(k as u32 - 1) > 1_000_000 {
        return Err(DucError::param("cross-validation grid is too large"));
    }
    let mut out = Vec::new();
    let mut cur = vec![0usize; k];
    fn rec(pos: usize, left: usize, cur: &mut Vec<usize>, steps: usize, out: &mut Vec<DVector<f64>>) {
        if pos == cur.len() - 1 {
            cur[pos] = left;
            out.push(DVector::from_iterator(cur.len(), cur.iter().map(|&c| c as f64 / steps as f64)));
            return;
        }
        for c in (0..=left).rev() {
            cur[pos] = c;
            rec(pos + 1, left - c, cur, steps, out);
        }
    }
    rec(0, steps, &mut cur, steps, &mut out);
    Ok(out)
}

fn run_trial(world: &SyntheticWorld, opts: &ValidationOptions, seed: u64) -> Result<TrialOutcome> {
    let task = world.draw(seed)?;
    let pool = &world.pool;
    let probs = pool.atom_probabilities(&task.weights[0]);
    let population = RiskEvaluator::weighted(&pool.x, &pool.y, &probs, true)?;
    let oracle = population.minimiser()?;
    let evaluator = match opts.risk {
        RiskMode::Population => population,
        RiskMode::TestSet => RiskEvaluator::from_dataset(&task.test, true)?,
    };
    let datasets: Vec<_> =
        std::iter::once(&task.target).chain(task.existing.iter()).chain(task.candidates.iter()).collect();
    let whitener = Whitener::fit_pooled(&datasets)?;
    let target_moments =
        TargetMoments::new(whitener.transform_vec(&pool.population_means(&task.weights[0])), true)?;
    let summaries = datasets
        .iter()
        .zip(&task.ids)
        .map(|(d, id)| summarize(id, d, &whitener))
        .collect::<Result<Vec<_>>>()?;
    let stats = datasets.iter().map(|d| GramStats::new(d, true)).collect::<Result<Vec<_>>>()?;
    let ctx = TrialContext { world, task, stats, evaluator, oracle, target_moments, summaries, opts, seed };
    let k = 1 + ctx.task.existing.len();
    let base: Vec<usize> = (0..k).collect();
    let excess_without = ctx.excess(&base)?;
    let candidates = (0..ctx.task.candidates.len())
        .map(|j| {
            let mut idx = base.clone();
            idx.push(k + j);
            let est = estimate_duc(&ctx.z_for(&idx)?, opts.alpha)?;
            let excess = ctx.excess(&idx)?;
            let kl = kl_gaussian(&ctx.summaries[k + j], &ctx.summaries[0])?.value;
            Ok(CandidateTrial { rho2: est.rho2, ci: est.ci, excess, kl })
        })
        .map(|r: Result<CandidateTrial>| match r {
            Ok(c) => Some(c),
            Err(e) if e.is_numerical() => {
                log::debug!("skipping candidate in trial: {e}");
                None
            }
            Err(e) => {
                log::warn!("candidate failed in trial: {e}");
                None
            }
        })
        .collect();
    Ok(TrialOutcome { excess_without, candidates })
}

/// Population coefficient of each candidate from the true weight covariance.
fn population_ducs(world: &SyntheticWorld) -> Result<Vec<f64>> {
    let full = world.true_weight_cov()?;
    let sizes = world.sample_sizes();
    let k = 1 + world.cfg.existing.len();
    (0..world.cfg.candidates.len())
        .map(|j| {
            let mut idx: Vec<usize> = (0..k).collect();
            idx.push(k + j);
            let n: Vec<f64> = idx.iter().map(|&i| sizes[i] as f64).collect();
            let wc = WeightCov::raw_scaled(select(&full.matrix, &idx));
            Ok(duc_population(&wc, &CRatios::from_sizes(&n)?)?.rho2)
        })
        .collect()
}

/// Average excess risk with and without each candidate over independent
/// realisations of the task, paired with the covariate-only estimate.
pub fn validate_duc(cfg: &TaskConfig, opts: &ValidationOptions) -> Result<ValidationReport> {
    opts.validate()?;
    let world = SyntheticWorld::new(cfg.clone())?;
    validate_world(&world, opts)
}

pub fn validate_world(world: &SyntheticWorld, opts: &ValidationOptions) -> Result<ValidationReport> {
    opts.validate()?;
    let outcomes = (0..opts.trials as u64)
        .into_par_iter()
        .map(|t| run_trial(world, opts, trial_seed(opts.seed, t)))
        .collect::<Vec<Result<TrialOutcome>>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let ids = &world.cfg.candidates;
    let pop = population_ducs(world)?;
    let without: Vec<f64> = outcomes.iter().map(|o| o.excess_without).collect();
    let mean_without = mean(&without);
    let mut rows = Vec::with_capacity(ids.len());
    let mut details = Vec::with_capacity(ids.len());
    for (j, id) in ids.iter().enumerate() {
        let kept: Vec<(&TrialOutcome, &CandidateTrial)> =
            outcomes.iter().filter_map(|o| o.candidates[j].as_ref().map(|c| (o, c))).collect();
        let n = kept.len();
        let avg = |f: &dyn Fn(&(&TrialOutcome, &CandidateTrial)) -> f64| -> f64 {
            if n == 0 {
                f64::NAN
            } else {
                kept.iter().map(f).sum::<f64>() / n as f64
            }
        };
        let base = avg(&|p| p.0.excess_without);
        let with = avg(&|p| p.1.excess);
        rows.push(ValidationRow {
            candidate_id: id.clone(),
            duc: avg(&|p| p.1.rho2),
            duc_ci_low: avg(&|p| p.1.ci[0]),
            duc_ci_high: avg(&|p| p.1.ci[1]),
            empirical_fraction: (base - with) / base,
            trials: n,
        });
        details.push(CandidateDetail {
            candidate_id: id.clone(),
            duc_population: pop[j],
            mean_excess_with: with,
            kl_gaussian: avg(&|p| p.1.kl),
            skipped_trials: opts.trials - n,
        });
    }
    let duc: Vec<f64> = rows.iter().map(|r| r.duc).collect();
    let frac: Vec<f64> = rows.iter().map(|r| r.empirical_fraction).collect();
    let neg_kl: Vec<f64> = details.iter().map(|d| -d.kl_gaussian).collect();
    let enough = opts.trials >= 2;
    let summary = ValidationSummary {
        trials: opts.trials,
        candidates: ids.len(),
        mean_excess_without: mean_without,
        pearson: if enough { pearson(&duc, &frac) } else { None },
        spearman: if enough { spearman(&duc, &frac) } else { None },
        mean_abs_deviation: mean_abs_deviation(&duc, &frac),
        kl_spearman: if enough { spearman(&neg_kl, &frac) } else { None },
        note: (!enough).then(|| "insufficient trials".to_string()),
    };
    Ok(ValidationReport { rows, details, summary })
}

/// Excess risk of the target-only fit, one value per trial.
pub fn target_only_excess(world: &SyntheticWorld, trials: usize, seed: u64) -> Result<Vec<f64>> {
    let opts = ValidationOptions { trials, seed, ..Default::default() };
    (0..trials as u64)
        .into_par_iter()
        .map(|t| {
            let s = trial_seed(seed, t);
            let task = world.draw(s)?;
            let pool = &world.pool;
            let ev =
                RiskEvaluator::weighted(&pool.x, &pool.y, &pool.atom_probabilities(&task.weights[0]), true)?;
            let oracle = ev.minimiser()?;
            let theta = fit_from_stats(&[(&GramStats::new(&task.target, true)?, 1.0)], opts.ridge, true)?;
            Ok(ev.excess(&theta, &oracle))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_grid_counts() {
        assert_eq!(simplex_grid(1, 0.1).unwrap().len(), 1);
        assert_eq!(simplex_grid(2, 0.1).unwrap().len(), 11);
        assert_eq!(simplex_grid(3, 0.1).unwrap().len(), 66);
        for b in simplex_grid(3, 0.25).unwrap() {
            assert!((b.sum() - 1.0).abs() < 1e-12);
        }
        assert!(simplex_grid(5, 0.1).is_err());
    }

    #[test]
    fn options_are_checked() {
        let bad = ValidationOptions { trials: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ValidationOptions { alpha: 1.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ValidationOptions {
            beta: BetaMode::CrossValidated { folds: 1, grid_step: 0.1 },
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
