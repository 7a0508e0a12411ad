//! Ranking candidate sources by estimated coefficient.

use std::cmp::Ordering;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::empirical::estimate_duc;
use super::types::{DucEstimate, DucMethod};
use crate::data::Dataset;
use crate::error::{DucError, Result};
use crate::linalg::column_means;
use crate::seeding::{rng_from_seed, trial_seed};
use crate::summaries::{build_z, summarize, SourceSummary, TargetMoments, WhitenMode, Whitener};

/// Sort by `rho2` descending, ties by `source_id` ascending.
pub fn sort_ranking(list: &mut [DucEstimate]) {
    list.sort_by(|a, b| {
        b.rho2.partial_cmp(&a.rho2).unwrap_or(Ordering::Equal).then_with(|| a.source_id.cmp(&b.source_id))
    });
}

/// Evaluate each candidate as the `(K+1)`-th source against the same existing set.
pub fn rank_candidates(
    target: &TargetMoments,
    target_summary: &SourceSummary,
    existing: &[SourceSummary],
    candidates: &[SourceSummary],
    alpha: f64,
) -> Result<Vec<DucEstimate>> {
    let mut out = Vec::with_capacity(candidates.len());
    for cand in candidates {
        let mut sources: Vec<&SourceSummary> = existing.iter().collect();
        sources.push(cand);
        let z = build_z(target, target_summary, &sources)?;
        out.push(estimate_duc(&z, alpha)?.with_id(cand.source_id.clone()));
    }
    sort_ranking(&mut out);
    Ok(out)
}

/// Whiten raw summaries using the pooled moments they imply.
///
/// Every summary must carry a covariance. Returns the whitened target moments
/// and summaries in input order.
pub fn whiten_summaries(
    target: &TargetMoments,
    summaries: &[SourceSummary],
) -> Result<(TargetMoments, Vec<SourceSummary>)> {
    let refs: Vec<&SourceSummary> = summaries.iter().collect();
    let w = Whitener::from_summaries(&refs)?;
    let t = TargetMoments::new(w.transform_vec(&target.vector()), target.known_exactly)?;
    let finv = w.factor.clone().try_inverse().ok_or_else(|| DucError::Singular("whitening factor".into()))?;
    let out = summaries
        .iter()
        .map(|s| SourceSummary {
            source_id: s.source_id.clone(),
            means: w.transform_vec(&s.means),
            n: s.n,
            cov: s.cov.as_ref().map(|c| &finv * c * finv.transpose()),
        })
        .collect();
    Ok((t, out))
}

/// Settings for the repeated-subsampling protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsampleSpec {
    pub trials: usize,
    /// Fraction of each source's rows drawn (without replacement) per trial.
    pub fraction: f64,
    /// Share of target rows held out to estimate the target means when they
    /// are not supplied.
    pub holdout_fraction: f64,
    pub seed: u64,
    pub whiten: WhitenMode,
}

impl Default for SubsampleSpec {
    fn default() -> Self {
        Self { trials: 1000, fraction: 0.8, holdout_fraction: 0.5, seed: 0, whiten: WhitenMode::Pooled }
    }
}

impl SubsampleSpec {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(DucError::param("trials must be at least 1"));
        }
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(DucError::param(format!("fraction {} outside (0, 1]", self.fraction)));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(DucError::param(format!(
                "holdout fraction {} outside (0, 1)",
                self.holdout_fraction
            )));
        }
        Ok(())
    }
}

fn take(rows: &[usize], fraction: f64) -> Vec<usize> {
    let k = ((rows.len() as f64 * fraction).floor() as usize).clamp(1, rows.len());
    rows[..k].to_vec()
}

fn shuffled(n: usize, rng: &mut crate::seeding::SimRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx
}

/// One subsampling trial; `None` entries mark candidates whose estimate was degenerate.
fn subsample_trial(
    target_data: &Dataset,
    target_means: Option<&DVector<f64>>,
    existing: &[(String, Dataset)],
    candidates: &[(String, Dataset)],
    alpha: f64,
    spec: &SubsampleSpec,
    seed: u64,
) -> Result<Vec<Option<DucEstimate>>> {
    let mut rng = rng_from_seed(seed);
    let order = shuffled(target_data.n_rows(), &mut rng);
    let (e1_raw, target_rows) = match target_means {
        Some(m) => (m.clone(), take(&order, spec.fraction)),
        None => {
            let h = ((order.len() as f64 * spec.holdout_fraction).round() as usize).clamp(1, order.len() - 1);
            let holdout = target_data.select_rows(&order[..h]);
            (column_means(&holdout.x), take(&order[h..], spec.fraction))
        }
    };
    let target = target_data.select_rows(&target_rows);
    let pick = |d: &Dataset, rng: &mut crate::seeding::SimRng| {
        let o = shuffled(d.n_rows(), rng);
        d.select_rows(&take(&o, spec.fraction))
    };
    let ex: Vec<Dataset> = existing.iter().map(|(_, d)| pick(d, &mut rng)).collect();
    let cs: Vec<Dataset> = candidates.iter().map(|(_, d)| pick(d, &mut rng)).collect();

    let whitener = match spec.whiten {
        WhitenMode::TargetOnly => Whitener::fit(&target)?,
        WhitenMode::Pooled => {
            let mut all: Vec<&Dataset> = vec![&target];
            all.extend(ex.iter());
            all.extend(cs.iter());
            Whitener::fit_pooled(&all)?
        }
    };
    let tm = TargetMoments::new(whitener.transform_vec(&e1_raw), target_means.is_some())?;
    let ts = summarize("target", &target, &whitener)?;
    let es: Vec<SourceSummary> =
        existing.iter().zip(&ex).map(|((id, _), d)| summarize(id, d, &whitener)).collect::<Result<_>>()?;
    let mut out = Vec::with_capacity(cs.len());
    for ((id, _), d) in candidates.iter().zip(&cs) {
        let cs = summarize(id, d, &whitener)?;
        let mut sources: Vec<&SourceSummary> = es.iter().collect();
        sources.push(&cs);
        let z = build_z(&tm, &ts, &sources)?;
        match estimate_duc(&z, alpha) {
            Ok(e) => out.push(Some(e)),
            Err(e @ (DucError::DegenerateResidual(_) | DucError::Singular(_))) => {
                log::debug!("candidate {id}: {e}");
                out.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Rank candidates from raw covariate rows, averaging the estimate over
/// repeated subsamples. `target_means` are raw-scale population means; when
/// absent they are estimated from a held-out target split in each trial.
pub fn rank_candidates_subsampled(
    target_data: &Dataset,
    target_means: Option<&DVector<f64>>,
    existing: &[(String, Dataset)],
    candidates: &[(String, Dataset)],
    alpha: f64,
    spec: &SubsampleSpec,
) -> Result<Vec<DucEstimate>> {
    spec.validate()?;
    if candidates.is_empty() {
        return Ok(Vec::new());
    }
    let l = target_data.n_covariates();
    for (id, d) in existing.iter().chain(candidates) {
        if d.n_covariates() != l {
            return Err(DucError::Schema(format!(
                "source {id} has {} covariates, target has {l}",
                d.n_covariates()
            )));
        }
        if d.is_empty() {
            return Err(DucError::EmptyDataset(format!("source {id} has no rows")));
        }
    }
    if target_means.is_none() && target_data.n_rows() < 2 {
        return Err(DucError::EmptyDataset("target split needs at least 2 rows".into()));
    }
    let per_trial: Vec<Vec<Option<DucEstimate>>> = (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            subsample_trial(
                target_data,
                target_means,
                existing,
                candidates,
                alpha,
                spec,
                trial_seed(spec.seed, t as u64),
            )
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(candidates.len());
    for (c, (id, _)) in candidates.iter().enumerate() {
        let (mut rho, mut lo, mut hi, mut used) = (0.0, 0.0, 0.0, 0usize);
        let mut l_used = None;
        for trial in &per_trial {
            if let Some(e) = &trial[c] {
                rho += e.rho2;
                lo += e.ci[0];
                hi += e.ci[1];
                used += 1;
                l_used = e.l;
            }
        }
        if used == 0 {
            return Err(DucError::DegenerateResidual(format!(
                "candidate {id} was degenerate in every trial"
            )));
        }
        let n = used as f64;
        out.push(DucEstimate {
            source_id: Some(id.clone()),
            rho2: rho / n,
            ci: [lo / n, hi / n],
            l: l_used,
            alpha: Some(alpha),
            method: DucMethod::EmpiricalPartialCorrelation,
            trials: used,
        });
    }
    sort_ranking(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn s(id: &str, means: &[f64]) -> SourceSummary {
        SourceSummary::new(id, DVector::from_row_slice(means), 10, None).unwrap()
    }

    #[test]
    fn single_candidate_gives_singleton() {
        let t = TargetMoments { means: vec![0.0, 0.1, 0.2, 0.0], known_exactly: true };
        let ts = s("t", &[0.1, 0.0, 0.3, -0.2]);
        let r = rank_candidates(&t, &ts, &[], &[s("a", &[0.3, -0.1, 0.2, 0.4])], 0.05).unwrap();
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].source_id.as_deref(), Some("a"));
    }

    #[test]
    fn ties_break_by_id() {
        let mut v = vec![
            DucEstimate::point(0.5, DucMethod::PopulationFormula).with_id("b"),
            DucEstimate::point(0.5, DucMethod::PopulationFormula).with_id("a"),
            DucEstimate::point(0.7, DucMethod::PopulationFormula).with_id("c"),
        ];
        sort_ranking(&mut v);
        let ids: Vec<_> = v.iter().map(|e| e.source_id.clone().unwrap()).collect();
        assert_eq!(ids, ["c", "a", "b"]);
    }

    #[test]
    fn whitened_summaries_match_row_whitening() {
        use crate::summaries::summarize_raw;
        let x = DMatrix::from_fn(20, 2, |i, j| ((i * 7 + j * 3) % 11) as f64 + j as f64 * i as f64 * 0.1);
        let a = Dataset::from_covariates(x.rows(0, 12).into_owned());
        let b = Dataset::from_covariates(x.rows(12, 8).into_owned());
        let sa = summarize_raw("a", &a).unwrap();
        let sb = summarize_raw("b", &b).unwrap();
        let t = TargetMoments { means: vec![1.0, 2.0], known_exactly: true };
        let (tw, ws) = whiten_summaries(&t, &[sa, sb]).unwrap();
        let w = Whitener::fit_pooled(&[&a, &b]).unwrap();
        let direct = summarize("a", &a, &w).unwrap();
        assert!((ws[0].means.clone() - direct.means).amax() < 1e-10);
        assert!((ws[0].cov.clone().unwrap() - direct.cov.unwrap()).amax() < 1e-10);
        assert!((tw.vector() - w.transform_vec(&t.vector())).amax() < 1e-12);
    }
}
