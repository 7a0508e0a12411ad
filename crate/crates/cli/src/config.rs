//! Run configuration: a JSON file plus command-line overrides.

use std::path::{Path, PathBuf};

use duc_core::shift_sim::TaskConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Rank,
    Simulate,
    Validate,
    PlanSize,
    PlanBudget,
    Baselines,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Rank => "rank",
            Command::Simulate => "simulate",
            Command::Validate => "validate",
            Command::PlanSize => "plan-size",
            Command::PlanBudget => "plan-budget",
            Command::Baselines => "baselines",
        }
    }
}

/// One data source: covariate rows in a CSV file or a summary JSON record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceInput {
    pub id: String,
    #[serde(default)]
    pub csv: Option<PathBuf>,
    #[serde(default)]
    pub summary: Option<PathBuf>,
}

impl SourceInput {
    pub fn path(&self) -> &Path {
        self.csv.as_deref().or(self.summary.as_deref()).expect("checked at load")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub target: SourceInput,
    #[serde(default)]
    pub existing: Vec<SourceInput>,
    #[serde(default)]
    pub candidates: Vec<SourceInput>,
}

impl Inputs {
    pub fn all(&self) -> impl Iterator<Item = &SourceInput> {
        std::iter::once(&self.target).chain(self.existing.iter()).chain(self.candidates.iter())
    }

    /// True when every source is given as a summary record.
    pub fn summaries_only(&self) -> bool {
        self.all().all(|s| s.summary.is_some())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetMomentsSource {
    /// JSON file `{"means": [...], "known_exactly": true}`.
    File(PathBuf),
    /// Estimate the means from a held-out share of the target rows.
    EstimateFromSplit {
        #[serde(default = "half")]
        holdout_fraction: f64,
    },
}

fn half() -> f64 {
    0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovForm {
    /// `Sigma^W / m` with the target first.
    Raw,
    /// Covariance of `W^(k) - W^(1)` over the sampled sources.
    Differenced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SizePlanInput {
    pub weight_cov: Vec<Vec<f64>>,
    pub form: CovForm,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetPlanInput {
    /// Variance of the source-minus-target weight; alternative to `weight_cov`.
    #[serde(default)]
    pub variance: Option<f64>,
    #[serde(default)]
    pub weight_cov: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub form: Option<CovForm>,
    pub kappa1: f64,
    pub kappa2: f64,
    pub budget: f64,
    /// Source observations already held, for the next-purchase decision.
    #[serde(default)]
    pub current_n2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub inputs: Option<Inputs>,
    #[serde(default)]
    pub target_moments: Option<TargetMomentsSource>,
    #[serde(default)]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub task_file: Option<PathBuf>,
    #[serde(default)]
    pub size_plan: Option<SizePlanInput>,
    #[serde(default)]
    pub budget_plan: Option<BudgetPlanInput>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub trials: Option<usize>,
    #[serde(default)]
    pub master_seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Add baseline scores to the ranking report.
    #[serde(default)]
    pub baselines: bool,
    /// Share of each source's rows used per subsampling trial.
    #[serde(default = "default_fraction")]
    pub subsample_fraction: f64,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_fraction() -> f64 {
    0.8
}

/// Values given on the command line; each replaces the config value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub alpha: Option<f64>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_json_str(text: &str, base: &Path) -> CliResult<Self> {
        let mut cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))?;
        cfg.resolve(base)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json_str(&text, &base)
    }

    /// Make relative paths relative to the config file and check that inputs exist.
    fn resolve(&mut self, base: &Path) -> CliResult<()> {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let exists = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(CliError::config(format!("{what} {} does not exist", p.display())))
            }
        };
        if let Some(inputs) = &mut self.inputs {
            for s in std::iter::once(&mut inputs.target)
                .chain(inputs.existing.iter_mut())
                .chain(inputs.candidates.iter_mut())
            {
                match (&mut s.csv, &mut s.summary) {
                    (Some(p), None) | (None, Some(p)) => {
                        fix(p);
                        exists(p, &format!("input for source {}", s.id))?;
                    }
                    _ => {
                        return Err(CliError::config(format!(
                            "source {} needs exactly one of `csv` or `summary`",
                            s.id
                        )))
                    }
                }
            }
        }
        if let Some(TargetMomentsSource::File(p)) = &mut self.target_moments {
            fix(p);
            exists(p, "target-moments file")?;
        }
        if let Some(p) = &mut self.task_file {
            fix(p);
            exists(p, "task file")?;
        }
        if let Some(p) = &mut self.output {
            fix(p);
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.master_seed = Some(s);
        }
        if let Some(t) = o.trials {
            self.trials = Some(t);
        }
        if let Some(a) = o.alpha {
            self.alpha = a;
        }
        if let Some(p) = &o.out {
            self.output = Some(p.clone());
        }
    }

    pub fn check(&self, command: Command) -> CliResult<()> {
        if let Some(c) = self.command {
            if c != command {
                return Err(CliError::config(format!(
                    "config is for `{}`, invoked as `{}`",
                    c.name(),
                    command.name()
                )));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(CliError::config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        if self.trials == Some(0) {
            return Err(CliError::config("trials must be at least 1"));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(CliError::config("subsample_fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.master_seed.unwrap_or(0)
    }

    /// The simulator task, inline or from `task_file`, with the run seed applied.
    pub fn task_config(&self) -> CliResult<TaskConfig> {
        let mut task = match (&self.task, &self.task_file) {
            (Some(t), None) => {
                t.validate()?;
                t.clone()
            }
            (None, Some(p)) => TaskConfig::from_json_path(p)?,
            (None, None) => return Err(CliError::config("missing `task` or `task_file`")),
            (Some(_), Some(_)) => return Err(CliError::config("give only one of `task` and `task_file`")),
        };
        if let Some(s) = self.master_seed {
            task.master_seed = s;
        }
        Ok(task)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_over_config() {
        let mut cfg =
            RunConfig::from_json_str(r#"{"alpha": 0.1, "trials": 5, "master_seed": 3}"#, Path::new("."))
                .unwrap();
        cfg.apply(&Overrides { seed: Some(9), trials: None, alpha: Some(0.2), out: None });
        assert_eq!(cfg.master_seed, Some(9));
        assert_eq!(cfg.trials, Some(5));
        assert_eq!(cfg.alpha, 0.2);
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = RunConfig::from_json_str("{}", Path::new(".")).unwrap();
        assert_eq!(cfg.alpha, 0.05);
        assert_eq!(cfg.seed(), 0);
        assert!(!cfg.baselines);
    }

    #[test]
    fn unknown_fields_and_missing_paths_are_config_errors() {
        assert!(RunConfig::from_json_str(r#"{"alpah": 0.1}"#, Path::new(".")).is_err());
        let e = RunConfig::from_json_str(
            r#"{"inputs": {"target": {"id": "t", "csv": "/nonexistent/t.csv"}}}"#,
            Path::new("."),
        )
        .unwrap_err();
        assert_eq!(e.code(), 2);
    }

    #[test]
    fn alpha_and_trials_are_checked() {
        let cfg = RunConfig::from_json_str(r#"{"alpha": 1.5}"#, Path::new(".")).unwrap();
        assert!(cfg.check(Command::Rank).is_err());
        let cfg = RunConfig::from_json_str(r#"{"trials": 0}"#, Path::new(".")).unwrap();
        assert!(cfg.check(Command::Rank).is_err());
        let cfg = RunConfig::from_json_str(r#"{"command": "validate"}"#, Path::new(".")).unwrap();
        assert!(cfg.check(Command::Rank).is_err());
    }

    #[test]
    fn target_moment_sources_parse() {
        let cfg = RunConfig::from_json_str(
            r#"{"target_moments": {"estimate-from-split": {"holdout_fraction": 0.3}}}"#,
            Path::new("."),
        )
        .unwrap();
        assert_eq!(
            cfg.target_moments,
            Some(TargetMomentsSource::EstimateFromSplit { holdout_fraction: 0.3 })
        );
    }
}
