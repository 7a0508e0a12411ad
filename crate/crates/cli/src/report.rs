//! Versioned JSON reports and their on-disk layout.

use std::path::Path;

use duc_core::baselines::BaselineScore;
use duc_core::duc::DucEstimate;
use duc_core::erm::{CandidateDetail, ValidationRow, ValidationSummary};
use duc_core::sampling::{IncrementalDecision, SamplingPlan};
use serde::Serialize;
use serde_json::Value;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: &str = "1.0.0";
/// Pearson correlation the validation summary flags as a pass.
pub const PEARSON_THRESHOLD: f64 = 0.9;

/// A report plus optional tidy table and auxiliary files.
#[derive(Debug, Clone, PartialEq)]
pub struct Output {
    pub report: Value,
    /// CSV written next to the report with a `.csv` extension.
    pub table: Option<String>,
    /// `(file name, contents)` written into the report's directory.
    pub files: Vec<(String, String)>,
}

fn envelope<T: Serialize>(command: &str, body: &T) -> Output {
    let mut v = serde_json::to_value(body).expect("report serialises");
    let obj = v.as_object_mut().expect("report is an object");
    obj.insert("schema_version".into(), Value::from(SCHEMA_VERSION));
    obj.insert("command".into(), Value::from(command));
    Output { report: v, table: None, files: Vec::new() }
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("csv output is utf-8")
}

#[derive(Debug, Clone, Serialize)]
pub struct RankReport {
    pub alpha: f64,
    pub seed: u64,
    pub trials: usize,
    pub ranking: Vec<DucEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baselines: Option<Vec<BaselineScore>>,
}

impl RankReport {
    pub fn new(
        cfg: &RunConfig,
        ranking: Vec<DucEstimate>,
        trials: usize,
        baselines: Option<Vec<BaselineScore>>,
    ) -> Self {
        Self { alpha: cfg.alpha, seed: cfg.seed(), trials, ranking, baselines }
    }

    pub fn into_output(self) -> Output {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["rank", "candidate_id", "rho2", "ci_low", "ci_high", "trials"])
            .expect("in-memory csv");
        for (i, e) in self.ranking.iter().enumerate() {
            w.write_record([
                (i + 1).to_string(),
                e.source_id.clone().unwrap_or_default(),
                format!("{:?}", e.rho2),
                format!("{:?}", e.ci[0]),
                format!("{:?}", e.ci[1]),
                e.trials.to_string(),
            ])
            .expect("in-memory csv");
        }
        let table = finish(w);
        let mut out = envelope("rank", &self);
        out.table = Some(table);
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselinesReport {
    pub scores: Vec<BaselineScore>,
}

impl BaselinesReport {
    pub fn new(scores: Vec<BaselineScore>) -> Self {
        Self { scores }
    }

    pub fn into_output(self) -> Output {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["source_id", "method", "value"]).expect("in-memory csv");
        for s in &self.scores {
            let method = serde_json::to_value(s.method).expect("method serialises");
            w.write_record([
                s.source_id.clone(),
                method.as_str().unwrap_or_default().to_string(),
                format!("{:?}", s.value),
            ])
            .expect("in-memory csv");
        }
        let table = finish(w);
        let mut out = envelope("baselines", &self);
        out.table = Some(table);
        out
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DatasetEntry {
    pub id: String,
    pub role: String,
    pub n: usize,
    pub file: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct PopulationEntry {
    pub candidate_id: String,
    pub rho2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateReport {
    pub seed: u64,
    pub regions: usize,
    pub datasets: Vec<DatasetEntry>,
    /// Exact `Sigma^W / m` in source order.
    pub weight_cov: Vec<Vec<f64>>,
    pub population_duc: Vec<PopulationEntry>,
}

impl SimulateReport {
    pub fn into_output(self) -> Output {
        envelope("simulate", &self)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidateReport {
    pub seed: u64,
    pub trials: usize,
    pub alpha: f64,
    pub rows: Vec<ValidationRow>,
    pub details: Vec<CandidateDetail>,
    pub summary: ValidationSummary,
    /// Pearson correlation at or above the threshold; absent with too few trials.
    pub pearson_pass: Option<bool>,
}

impl ValidateReport {
    pub fn into_output(self) -> Output {
        envelope("validate", &self)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SizePlanReport {
    pub plan: SamplingPlan,
}

impl SizePlanReport {
    pub fn into_output(self) -> Output {
        envelope("plan-size", &self)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BudgetPlanReport {
    pub variance: f64,
    pub plan: SamplingPlan,
    pub current_n2: f64,
    pub next_purchase: IncrementalDecision,
}

impl BudgetPlanReport {
    pub fn into_output(self) -> Output {
        envelope("plan-budget", &self)
    }
}

pub fn render(report: &Value) -> String {
    serde_json::to_string_pretty(report).expect("report serialises") + "\n"
}

/// Write the report, its table and auxiliary files, or print the report to
/// stdout when no path is given. Elapsed time goes to a `.runtime.json`
/// sidecar so the report itself stays reproducible.
pub fn write_output(out: &Output, path: Option<&Path>, seconds: f64) -> CliResult<()> {
    let Some(path) = path else {
        if !out.files.is_empty() {
            return Err(CliError::config("this command writes several files; pass --out"));
        }
        print!("{}", render(&out.report));
        return Ok(());
    };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    std::fs::write(path, render(&out.report))?;
    if let Some(t) = &out.table {
        std::fs::write(path.with_extension("csv"), t)?;
    }
    for (name, text) in &out.files {
        std::fs::write(dir.join(name), text)?;
    }
    let runtime = serde_json::json!({ "seconds": seconds });
    std::fs::write(path.with_extension("runtime.json"), render(&runtime))?;
    Ok(())
}
