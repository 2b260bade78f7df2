//! Run configuration: one JSON file with defaults for every section.

use std::path::Path;

use mwnet_core::fit::FitConfig;
use mwnet_core::nn::TrainConfig;
use mwnet_core::phantom::CohortConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const SEED_ENV: &str = "MWNET_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Applied to the cohort and to training; see [`resolve_seed`].
    pub seed: u64,
    pub workers: usize,
    pub cohort: CohortConfig,
    pub fit: FitConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            cohort: CohortConfig::default(),
            fit: FitConfig::default(),
            train: TrainConfig::fast(),
            eval: EvalConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Myelin-window upper bounds for the threshold sweep, ms.
    pub thresholds_ms: Vec<f64>,
    /// Restrict comparisons to reference MWF in (0, 0.30).
    pub refine: bool,
    pub bench_repetitions: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds_ms: vec![30.0, 40.0, 50.0],
            refine: true,
            bench_repetitions: mwnet_core::eval::BENCH_REPS,
        }
    }
}

/// Parses a config file; syntax errors keep serde's line and column.
pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    if !path.exists() {
        return Err(mwnet_core::error::Error::MissingInput(path.to_path_buf()).into());
    }
    let text = std::fs::read_to_string(path).map_err(mwnet_core::error::Error::from)?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Precedence: flag, then `MWNET_SEED`, then the file.
pub fn resolve_seed(flag: Option<u64>, env: Option<&str>, file: u64) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match env {
        Some(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        None => Ok(file),
    }
}

impl RunConfig {
    pub fn resolve(
        file: Option<&Path>,
        seed_flag: Option<u64>,
        workers_flag: Option<usize>,
    ) -> Result<RunConfig, CliError> {
        let mut cfg = match file {
            Some(p) => load(p)?,
            None => RunConfig::default(),
        };
        let env = std::env::var(SEED_ENV).ok();
        cfg.seed = resolve_seed(seed_flag, env.as_deref(), cfg.seed)?;
        cfg.cohort.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        if let Some(w) = workers_flag {
            cfg.workers = w;
        }
        if cfg.workers == 0 {
            return Err(CliError::Config("workers must be positive".into()));
        }
        cfg.cohort.validate()?;
        cfg.fit.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    /// Writes `resolved_config.json` into `dir`.
    pub fn write_resolved(&self, dir: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).map_err(mwnet_core::error::Error::from)?;
        text.push('\n');
        std::fs::write(dir.join("resolved_config.json"), text).map_err(mwnet_core::error::Error::from)?;
        Ok(())
    }
}
