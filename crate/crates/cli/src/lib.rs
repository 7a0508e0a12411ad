//! Library side of the `duc` command-line tool.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::time::Instant;

pub use config::{Command, Overrides, RunConfig};
pub use error::{CliError, CliResult, ExitKind};

/// Load the config, apply overrides, run the command and write its outputs.
pub fn execute(command: Command, config: &std::path::Path, overrides: &Overrides) -> CliResult<()> {
    let mut cfg = RunConfig::load(config)?;
    cfg.apply(overrides);
    let start = Instant::now();
    let out = commands::run(command, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    log::info!("{} finished in {seconds:.3} s", command.name());
    report::write_output(&out, cfg.output.as_deref(), seconds)
}

/// Cap rayon's global pool from `DUC_THREADS`.
pub fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("DUC_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::config(format!("DUC_THREADS must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::config("DUC_THREADS must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("thread pool: {e}")))?;
    }
    Ok(())
}
