//! The six subcommands. Each returns its report; writing is left to the caller.

use std::path::Path;

use duc_core::baselines::{domain_classifier_score, kl_gaussian, BaselineScore};
use duc_core::duc::{
    duc_population, rank_candidates, rank_candidates_subsampled, whiten_summaries, CRatios, DucEstimate,
    SubsampleSpec, WeightCov,
};
use duc_core::erm::{validate_duc, ValidationOptions};
use duc_core::sampling::{
    budget_plan, differenced_variance, incremental_value, size_constrained_plan, BudgetSpec,
};
use duc_core::shift_sim::SyntheticWorld;
use duc_core::summaries::{summarize, SourceSummary, SummaryRecord, TargetMoments, WhitenMode, Whitener};
use duc_core::Dataset;
use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::config::{Command, CovForm, Inputs, RunConfig, SourceInput, TargetMomentsSource};
use crate::error::{CliError, CliResult};
use crate::report::{
    BaselinesReport, BudgetPlanReport, DatasetEntry, Output, PopulationEntry, RankReport, SimulateReport,
    SizePlanReport, ValidateReport, PEARSON_THRESHOLD,
};

const DEFAULT_RANK_TRIALS: usize = 100;

pub fn run(command: Command, cfg: &RunConfig) -> CliResult<Output> {
    cfg.check(command)?;
    match command {
        Command::Rank => cmd_rank(cfg),
        Command::Simulate => cmd_simulate(cfg),
        Command::Validate => cmd_validate(cfg),
        Command::PlanSize => cmd_plan_size(cfg),
        Command::PlanBudget => cmd_plan_budget(cfg),
        Command::Baselines => cmd_baselines(cfg),
    }
}

fn inputs(cfg: &RunConfig) -> CliResult<&Inputs> {
    cfg.inputs.as_ref().ok_or_else(|| CliError::config("missing `inputs`"))
}

/// Covariate rows only; any outcome column is dropped on load.
fn read_covariates(s: &SourceInput) -> CliResult<Dataset> {
    let path =
        s.csv.as_ref().ok_or_else(|| CliError::config(format!("source {} is not a csv input", s.id)))?;
    let mut d =
        Dataset::read_csv_path(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    d.y = None;
    if d.is_empty() {
        return Err(CliError::data(format!("{}: no usable rows", path.display())));
    }
    Ok(d)
}

fn read_summary(s: &SourceInput) -> CliResult<SourceSummary> {
    let path = s.summary.as_ref().expect("summary input");
    let text = std::fs::read_to_string(path)?;
    let rec: SummaryRecord =
        serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
    let mut sum = SourceSummary::from_record(&rec)?;
    sum.source_id = s.id.clone();
    Ok(sum)
}

fn read_moments(path: &Path) -> CliResult<TargetMoments> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn check_dims<'a>(sets: impl Iterator<Item = (&'a str, usize)>) -> CliResult<()> {
    let mut first: Option<(&str, usize)> = None;
    for (id, l) in sets {
        match first {
            None => first = Some((id, l)),
            Some((fid, fl)) if fl != l => {
                return Err(CliError::config(format!(
                    "schema mismatch: {id} has {l} covariates, {fid} has {fl}"
                )))
            }
            _ => {}
        }
    }
    Ok(())
}

fn cmd_rank(cfg: &RunConfig) -> CliResult<Output> {
    let inp = inputs(cfg)?;
    if inp.candidates.is_empty() {
        return Err(CliError::config("no candidates to rank"));
    }
    let moments = cfg.target_moments.as_ref().ok_or_else(|| {
        CliError::config("missing `target_moments`: give a file or set `estimate-from-split`")
    })?;
    let (ranking, trials, baselines) = if inp.summaries_only() {
        rank_from_summaries(cfg, inp, moments)?
    } else if inp.all().all(|s| s.csv.is_some()) {
        rank_from_rows(cfg, inp, moments)?
    } else {
        return Err(CliError::config("mix of csv and summary inputs; use one kind"));
    };
    let report = RankReport::new(cfg, ranking, trials, baselines);
    Ok(report.into_output())
}

fn rank_from_summaries(
    cfg: &RunConfig,
    inp: &Inputs,
    moments: &TargetMomentsSource,
) -> CliResult<(Vec<DucEstimate>, usize, Option<Vec<BaselineScore>>)> {
    let path = match moments {
        TargetMomentsSource::File(p) => p,
        TargetMomentsSource::EstimateFromSplit { .. } => {
            return Err(CliError::config("estimate-from-split needs csv inputs, not summaries"))
        }
    };
    let target_moments = read_moments(path)?;
    let all: Vec<SourceSummary> = inp.all().map(read_summary).collect::<CliResult<_>>()?;
    check_dims(
        std::iter::once(("target moments", target_moments.means.len()))
            .chain(all.iter().map(|s| (s.source_id.as_str(), s.dim()))),
    )?;
    let (tm, all) = if all.iter().all(|s| s.cov.is_some()) {
        whiten_summaries(&target_moments, &all)?
    } else {
        log::warn!("some summaries lack covariances; ranking on unwhitened means");
        (target_moments, all)
    };
    let k = 1 + inp.existing.len();
    let ranking = rank_candidates(&tm, &all[0], &all[1..k], &all[k..], cfg.alpha)?;
    let baselines = if cfg.baselines {
        let scores = all[k..]
            .iter()
            .filter(|s| s.cov.is_some() && all[0].cov.is_some())
            .map(|s| kl_gaussian(s, &all[0]))
            .collect::<Result<Vec<_>, _>>()?;
        Some(scores)
    } else {
        None
    };
    Ok((ranking, 1, baselines))
}

fn rank_from_rows(
    cfg: &RunConfig,
    inp: &Inputs,
    moments: &TargetMomentsSource,
) -> CliResult<(Vec<DucEstimate>, usize, Option<Vec<BaselineScore>>)> {
    let target = read_covariates(&inp.target)?;
    let load = |list: &[SourceInput]| -> CliResult<Vec<(String, Dataset)>> {
        list.iter().map(|s| Ok((s.id.clone(), read_covariates(s)?))).collect()
    };
    let existing = load(&inp.existing)?;
    let candidates = load(&inp.candidates)?;
    check_dims(
        std::iter::once((inp.target.id.as_str(), target.n_covariates()))
            .chain(existing.iter().chain(&candidates).map(|(id, d)| (id.as_str(), d.n_covariates()))),
    )?;
    let (means, holdout) = match moments {
        TargetMomentsSource::File(p) => {
            let m = read_moments(p)?;
            if m.means.len() != target.n_covariates() {
                return Err(CliError::config(format!(
                    "target moments have {} entries for {} covariates",
                    m.means.len(),
                    target.n_covariates()
                )));
            }
            (Some(m.vector()), 0.5)
        }
        TargetMomentsSource::EstimateFromSplit { holdout_fraction } => (None, *holdout_fraction),
    };
    let trials = cfg.trials.unwrap_or(DEFAULT_RANK_TRIALS);
    let spec = SubsampleSpec {
        trials,
        fraction: cfg.subsample_fraction,
        holdout_fraction: holdout,
        seed: cfg.seed(),
        whiten: WhitenMode::Pooled,
    };
    let ranking =
        rank_candidates_subsampled(&target, means.as_ref(), &existing, &candidates, cfg.alpha, &spec)?;
    let baselines = if cfg.baselines { Some(row_baselines(&target, &candidates)?) } else { None };
    Ok((ranking, trials, baselines))
}

/// KL and domain-classifier scores of each source against the target rows.
fn row_baselines(target: &Dataset, sources: &[(String, Dataset)]) -> CliResult<Vec<BaselineScore>> {
    let mut parts: Vec<&Dataset> = vec![target];
    parts.extend(sources.iter().map(|(_, d)| d));
    let whitener = Whitener::fit_pooled(&parts)?;
    let ts = summarize("target", target, &whitener)?;
    let per_source: Vec<CliResult<Vec<BaselineScore>>> = sources
        .par_iter()
        .map(|(id, d)| {
            let kl = kl_gaussian(&summarize(id, d, &whitener)?, &ts)?;
            let dc = domain_classifier_score(id, d, target)?;
            Ok(vec![kl, dc])
        })
        .collect();
    let mut out = Vec::new();
    for r in per_source {
        out.extend(r?);
    }
    Ok(out)
}

fn cmd_baselines(cfg: &RunConfig) -> CliResult<Output> {
    let inp = inputs(cfg)?;
    if !inp.all().all(|s| s.csv.is_some()) {
        return Err(CliError::config("baselines need csv inputs for every source"));
    }
    let target = read_covariates(&inp.target)?;
    let sources: Vec<(String, Dataset)> = inp
        .existing
        .iter()
        .chain(&inp.candidates)
        .map(|s| Ok((s.id.clone(), read_covariates(s)?)))
        .collect::<CliResult<_>>()?;
    check_dims(
        std::iter::once((inp.target.id.as_str(), target.n_covariates()))
            .chain(sources.iter().map(|(id, d)| (id.as_str(), d.n_covariates()))),
    )?;
    let scores = row_baselines(&target, &sources)?;
    Ok(BaselinesReport::new(scores).into_output())
}

fn cmd_simulate(cfg: &RunConfig) -> CliResult<Output> {
    let task_cfg = cfg.task_config()?;
    let world = SyntheticWorld::new(task_cfg.clone())?;
    let seed = cfg.seed();
    let task = world.draw(seed)?;
    let sizes = world.sample_sizes();
    let mut files = Vec::new();
    let mut datasets = Vec::new();
    let roles = std::iter::once("target")
        .chain(task.existing.iter().map(|_| "existing"))
        .chain(task.candidates.iter().map(|_| "candidate"));
    let sets = task.training().into_iter().chain(task.candidates.iter());
    for ((id, role), d) in task.ids.iter().zip(roles).zip(sets) {
        let file = format!("{id}.csv");
        files.push((file.clone(), csv_text(d)?));
        datasets.push(DatasetEntry { id: id.clone(), role: role.into(), n: d.n_rows(), file });
    }
    files.push(("test.csv".to_string(), csv_text(&task.test)?));
    datasets.push(DatasetEntry {
        id: "test".into(),
        role: "test".into(),
        n: task.test.n_rows(),
        file: "test.csv".into(),
    });
    let full = world.true_weight_cov()?;
    let k = 1 + task_cfg.existing.len();
    let mut population = Vec::new();
    for (j, id) in task_cfg.candidates.iter().enumerate() {
        let mut idx: Vec<usize> = (0..k).collect();
        idx.push(k + j);
        let m = DMatrix::from_fn(idx.len(), idx.len(), |a, b| full.matrix[(idx[a], idx[b])]);
        let n: Vec<f64> = idx.iter().map(|&i| sizes[i] as f64).collect();
        let rho2 = duc_population(&WeightCov::raw_scaled(m), &CRatios::from_sizes(&n)?)?.rho2;
        population.push(PopulationEntry { candidate_id: id.clone(), rho2 });
    }
    let pool = &world.pool;
    let target_means: Vec<f64> = pool.population_means(&task.weights[0]).iter().cloned().collect();
    files.push((
        "target_moments.json".to_string(),
        serde_json::to_string_pretty(&TargetMoments { means: target_means, known_exactly: true })? + "\n",
    ));
    let report = SimulateReport {
        seed,
        regions: task_cfg.regions,
        datasets,
        weight_cov: rows(&full.matrix),
        population_duc: population,
    };
    let mut out = report.into_output();
    out.files = files;
    Ok(out)
}

fn csv_text(d: &Dataset) -> CliResult<String> {
    let mut buf = Vec::new();
    d.write_csv(&mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

fn cmd_validate(cfg: &RunConfig) -> CliResult<Output> {
    let task_cfg = cfg.task_config()?;
    let opts = ValidationOptions {
        trials: cfg.trials.unwrap_or(200),
        alpha: cfg.alpha,
        seed: cfg.seed(),
        ..Default::default()
    };
    let report = validate_duc(&task_cfg, &opts)?;
    let mut table = Vec::new();
    report.write_csv(&mut table)?;
    let pearson_pass = report.summary.pearson.map(|p| p >= PEARSON_THRESHOLD);
    let out = ValidateReport {
        seed: opts.seed,
        trials: opts.trials,
        alpha: opts.alpha,
        rows: report.rows,
        details: report.details,
        summary: report.summary,
        pearson_pass,
    };
    let mut o = out.into_output();
    o.table = Some(String::from_utf8(table).expect("csv output is utf-8"));
    Ok(o)
}

fn matrix(rows: &[Vec<f64>]) -> CliResult<DMatrix<f64>> {
    let k = rows.len();
    if k == 0 || rows.iter().any(|r| r.len() != k) {
        return Err(CliError::config("weight_cov must be a nonempty square matrix"));
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

fn weight_cov(rows: &[Vec<f64>], form: CovForm) -> CliResult<WeightCov> {
    let m = matrix(rows)?;
    Ok(match form {
        CovForm::Raw => WeightCov::raw_scaled(m),
        CovForm::Differenced => WeightCov::differenced_scaled(m),
    })
}

fn cmd_plan_size(cfg: &RunConfig) -> CliResult<Output> {
    let p = cfg.size_plan.as_ref().ok_or_else(|| CliError::config("missing `size_plan`"))?;
    let plan = size_constrained_plan(&weight_cov(&p.weight_cov, p.form)?, p.total)?;
    Ok(SizePlanReport { plan }.into_output())
}

fn cmd_plan_budget(cfg: &RunConfig) -> CliResult<Output> {
    let p = cfg.budget_plan.as_ref().ok_or_else(|| CliError::config("missing `budget_plan`"))?;
    let v = match (p.variance, &p.weight_cov) {
        (Some(v), None) => v,
        (None, Some(rows)) => match p.form.unwrap_or(CovForm::Raw) {
            CovForm::Raw => differenced_variance(&weight_cov(rows, CovForm::Raw)?)?,
            CovForm::Differenced => {
                let m = matrix(rows)?;
                if m.nrows() != 1 {
                    return Err(CliError::config("a differenced budget covariance is 1x1"));
                }
                m[(0, 0)]
            }
        },
        _ => return Err(CliError::config("give exactly one of `variance` and `weight_cov`")),
    };
    let spec = BudgetSpec::new(p.kappa1, p.kappa2, p.budget)?;
    let plan = budget_plan(v, &spec)?;
    if p.current_n2.is_nan() || p.current_n2 < 0.0 {
        return Err(CliError::config("current_n2 must be nonnegative"));
    }
    let next = incremental_value(p.kappa1, p.kappa2, v, p.current_n2);
    Ok(BudgetPlanReport { variance: v, plan, current_n2: p.current_n2, next_purchase: next }.into_output())
}
