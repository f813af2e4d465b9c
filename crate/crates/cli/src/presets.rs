//! Named desk-scale configurations shipped with the binary.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use flame_core::evaluation::{AutocorrOptions, ErrorOptions};
use flame_core::operators::ModelConfig;
use flame_core::solver::InitialConditionSpec;
use flame_core::training::TrainConfig;

use crate::commands::{DATASET_FILE, FINAL_CHECKPOINT};
use crate::config::{write_json, EvaluateConfig, GenerateConfig, TrainRunConfig};
use crate::error::{CliError, CliResult};

const SOURCES: [(&str, &str); 6] = [
    ("ks1d_beta10_desk", include_str!("../presets/ks1d_beta10_desk.json")),
    ("ks1d_beta10_long", include_str!("../presets/ks1d_beta10_long.json")),
    ("ms1d_beta10_desk", include_str!("../presets/ms1d_beta10_desk.json")),
    ("ks1d_beta40_desk", include_str!("../presets/ks1d_beta40_desk.json")),
    ("ms1d_beta40_desk", include_str!("../presets/ms1d_beta40_desk.json")),
    ("2d_beta15_smoke", include_str!("../presets/2d_beta15_smoke.json")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetModel {
    pub model: ModelConfig,
    pub train: TrainConfig,
    #[serde(default = "default_validation")]
    pub validation_fraction: f64,
}

fn default_validation() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetEvaluate {
    pub instances: usize,
    pub steps: usize,
    #[serde(default)]
    pub warmup_steps: usize,
    #[serde(default)]
    pub window: Option<[usize; 2]>,
    #[serde(default)]
    pub autocorrelation: AutocorrOptions,
    #[serde(default)]
    pub error: ErrorOptions,
    /// Seed of the evaluation initial conditions; distinct from the
    /// training data seed.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preset {
    pub name: String,
    pub description: String,
    pub generate: GenerateConfig,
    /// Keyed by model kind.
    pub models: BTreeMap<String, PresetModel>,
    pub evaluate: PresetEvaluate,
}

pub fn names() -> impl Iterator<Item = &'static str> {
    SOURCES.iter().map(|(n, _)| *n)
}

impl Preset {
    pub fn load(name: &str) -> CliResult<Self> {
        let (_, src) = SOURCES.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            CliError::config(format!("unknown preset {name:?}; available: {}", names().collect::<Vec<_>>().join(", ")))
        })?;
        serde_json::from_str(src).map_err(|e| CliError::config(format!("preset {name}: {e}")))
    }

    pub fn model(&self, kind: &str) -> CliResult<&PresetModel> {
        self.models
            .get(kind)
            .ok_or_else(|| CliError::config(format!("preset {} has no model {kind:?}", self.name)))
    }

    pub fn train_config(&self, kind: &str, dataset: PathBuf) -> CliResult<TrainRunConfig> {
        let m = self.model(kind)?;
        Ok(TrainRunConfig {
            dataset,
            validation_fraction: m.validation_fraction,
            model: m.model.clone(),
            train: m.train.clone(),
        })
    }

    /// Protocol for `checkpoint`, or for the solver itself when `None`.
    pub fn evaluate_config(&self, checkpoint: Option<PathBuf>) -> EvaluateConfig {
        let e = &self.evaluate;
        EvaluateConfig {
            checkpoint,
            solver: self.generate.solver,
            initial_condition: InitialConditionSpec { seed: e.seed, ..self.generate.initial_condition.clone() },
            instances: e.instances,
            steps: e.steps,
            warmup_steps: e.warmup_steps,
            window: e.window,
            autocorrelation: e.autocorrelation,
            error: e.error,
        }
    }

    /// Writes `generate.json`, `train_<kind>.json` and `evaluate_<kind>.json`
    /// into `dir`, wired to the default output layout
    /// (`data/`, `<kind>/`, `eval_<kind>/`).
    pub fn write(&self, dir: &Path) -> CliResult<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("{}: {e}", dir.display())))?;
        let mut written = Vec::new();
        let mut put = |name: String, value: &dyn Fn(&Path) -> CliResult<()>| -> CliResult<()> {
            let p = dir.join(name);
            value(&p)?;
            written.push(p);
            Ok(())
        };
        put("generate.json".into(), &|p| write_json(p, &self.generate))?;
        for kind in self.models.keys() {
            let t = self.train_config(kind, Path::new("data").join(DATASET_FILE))?;
            put(format!("train_{kind}.json"), &|p| write_json(p, &t))?;
            let e = self.evaluate_config(Some(Path::new(kind).join(FINAL_CHECKPOINT)));
            put(format!("evaluate_{kind}.json"), &|p| write_json(p, &e))?;
        }
        let e = self.evaluate_config(None);
        put("evaluate_solver.json".into(), &|p| write_json(p, &e))?;
        Ok(written)
    }
}

