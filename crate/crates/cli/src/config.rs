//! Run configuration: built-in defaults, an optional TOML file, then flags.

use std::path::Path;

use protocal_core::{CalibrationConfig, EmConfig, Representation, SelectionStrategy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SEED_ENV: &str = "PROTOCAL_SEED";

/// Estimate vectors per class when no size is given.
pub const ESTIMATE_PER_CLASS: usize = 250;

/// Every field is optional so a file can set any subset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub mode: Option<Representation>,
    pub restarts: Option<usize>,
    pub max_iter: Option<usize>,
    pub tol: Option<f64>,
    pub reg: Option<f64>,
    pub selection: Option<SelectionStrategy>,
    pub estimate_size: Option<usize>,
    pub seed: Option<u64>,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    /// Values from `other` win where present.
    pub fn overlay(self, other: RunConfigFile) -> Self {
        RunConfigFile {
            mode: other.mode.or(self.mode),
            restarts: other.restarts.or(self.restarts),
            max_iter: other.max_iter.or(self.max_iter),
            tol: other.tol.or(self.tol),
            reg: other.reg.or(self.reg),
            selection: other.selection.or(self.selection),
            estimate_size: other.estimate_size.or(self.estimate_size),
            seed: other.seed.or(self.seed),
        }
    }
}

/// Seed used when neither a flag nor the config file sets one.
pub fn default_seed() -> Result<u64, CliError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| CliError::usage(format!("{SEED_ENV}=`{v}` is not an unsigned integer"))),
        Err(_) => Ok(0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub calibration: CalibrationConfig,
    /// `None` means `ESTIMATE_PER_CLASS * N`.
    pub estimate_size: Option<usize>,
}

impl RunConfig {
    pub fn resolve(file: RunConfigFile) -> Result<Self, CliError> {
        let defaults = CalibrationConfig::default();
        let em = EmConfig {
            max_iter: file.max_iter.unwrap_or(defaults.em.max_iter),
            tol: file.tol.unwrap_or(defaults.em.tol),
            reg: file.reg.unwrap_or(defaults.em.reg),
            ..defaults.em
        };
        em.validate()?;
        let restarts = file.restarts.unwrap_or(defaults.restarts);
        if restarts == 0 {
            return Err(CliError::usage("restarts must be at least 1"));
        }
        if file.estimate_size == Some(0) {
            return Err(CliError::usage("estimate size must be positive"));
        }
        let seed = match file.seed {
            Some(s) => s,
            None => default_seed()?,
        };
        Ok(RunConfig {
            calibration: CalibrationConfig {
                mode: file.mode.unwrap_or(Representation::LogProb),
                restarts,
                em,
                selection: file.selection.unwrap_or_default(),
                seed,
            },
            estimate_size: file.estimate_size,
        })
    }

    pub fn estimate_size_for(&self, n_classes: usize) -> usize {
        self.estimate_size.unwrap_or(ESTIMATE_PER_CLASS * n_classes)
    }
}
