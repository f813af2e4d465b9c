//! JSON run configurations. Paths inside a config are resolved against the
//! directory of the config file.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use flame_core::evaluation::{AutocorrOptions, ErrorOptions};
use flame_core::operators::ModelConfig;
use flame_core::solver::{InitialConditionSpec, SolverConfig};
use flame_core::training::TrainConfig;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateConfig {
    pub solver: SolverConfig,
    pub initial_condition: InitialConditionSpec,
    pub n_sequences: usize,
    pub n_steps: usize,
}

fn default_validation() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    /// Dataset file written by `generate`.
    pub dataset: PathBuf,
    /// Share of sequences held out for validation.
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
    pub model: ModelConfig,
    /// `train.seed` also seeds the parameter initialisation.
    pub train: TrainConfig,
}

/// Which checkpoint of a training run to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateConfig {
    /// Checkpoint file; absent means the solver evaluates itself.
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    pub solver: SolverConfig,
    pub initial_condition: InitialConditionSpec,
    pub instances: usize,
    pub steps: usize,
    /// Reference steps taken before the rollouts start, for long-evolved
    /// initial states.
    #[serde(default)]
    pub warmup_steps: usize,
    /// Steps `[from, to)` over which front length and autocorrelation are
    /// averaged; defaults to the whole rollout.
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    #[serde(default)]
    pub autocorrelation: AutocorrOptions,
    #[serde(default)]
    pub error: ErrorOptions,
}

impl EvaluateConfig {
    pub fn window(&self) -> CliResult<std::ops::Range<usize>> {
        let [a, b] = self.window.unwrap_or([0, self.steps + 1]);
        if a >= b || b > self.steps + 1 {
            return Err(CliError::config(format!(
                "window [{a}, {b}) must be non-empty and within 0..={}",
                self.steps
            )));
        }
        Ok(a..b)
    }
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::config(format!("{}: {e}", path.display())))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::config(e.to_string()))?;
    s.push('\n');
    std::fs::write(path, s).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

/// `p` relative to the directory holding `config`, unless absolute.
pub fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}
