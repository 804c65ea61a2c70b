//! Experiment runner: JSON run configurations, `results.csv` tables and SVG
//! snapshots on top of `pct-core`.

pub mod config;
pub mod experiments;
pub mod results;
pub mod svg;

use std::path::{Path, PathBuf};

pub use config::{ConfigError, Experiment, RunConfig};
pub use experiments::run;
pub use results::{format_results, parse_results, MetricName, ResultRow};

/// Exit status for a configuration that fails to parse or validate.
pub const EXIT_INVALID_CONFIG: i32 = 2;
/// Exit status for a failure while the experiment runs.
pub const EXIT_RUNTIME: i32 = 1;

/// Reads and validates a configuration file, applying command-line overrides.
pub fn load_config(path: &Path, seed: Option<u64>, out: Option<PathBuf>) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        field: String::new(),
        message: format!("cannot read {}: {e}", path.display()),
    })?;
    RunConfig::from_json(&text, seed, out)
}

/// Concatenates the `results.csv` of several run directories under one header.
pub fn merge_reports(dirs: &[PathBuf]) -> Result<String, String> {
    let mut rows = Vec::new();
    for dir in dirs {
        let path = dir.join("results.csv");
        let text = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        rows.extend(parse_results(&text).map_err(|e| format!("{}: {e}", path.display()))?);
    }
    Ok(format_results(&rows))
}
