//! The four pipeline stages as library calls; `main` only parses flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use flame_core::evaluation::{
    autocorrelation, ensemble_average, error_curve, front_length_series, rollout_ensemble, MetricKind, MetricSeries,
    ModelStepper, Rollout, SolverStepper, Stepper,
};
use flame_core::operators::{Checkpoint, Model};
use flame_core::solver::{derive_seed, generate_trajectories, sample_initial_condition, simulate, InitialConditionSpec, TrajectoryDataset};
use flame_core::spectral::Field;
use flame_core::training::{read_history_csv, save_history_csv, train as train_epochs, TrainState};

use crate::config::{read_json, resolve, write_json, EvaluateConfig, GenerateConfig, TrainRunConfig};
use crate::error::{CliError, CliResult};
use crate::manifest::{ManifestBuilder, MANIFEST_FILE};
use crate::svg;

pub const DATASET_FILE: &str = "dataset.siva";
pub const FINAL_CHECKPOINT: &str = "checkpoint_final.flck";
pub const BEST_CHECKPOINT: &str = "checkpoint_best.flck";
pub const HISTORY_FILE: &str = "history.csv";

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub resume: bool,
    /// Suppress per-epoch progress lines.
    pub quiet: bool,
}

fn check_workers(workers: usize) -> CliResult<usize> {
    if workers == 0 {
        return Err(CliError::config("--workers must be at least 1"));
    }
    Ok(workers)
}

fn read_config_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))
}

fn create_dir(out: &Path) -> CliResult<()> {
    std::fs::create_dir_all(out).map_err(|e| CliError::io(format!("{}: {e}", out.display())))
}

#[derive(Debug, Clone, Serialize)]
pub struct GenerateSummary {
    pub path: PathBuf,
    pub n_sequences: usize,
    pub n_steps: usize,
    pub shape: Vec<usize>,
    pub value_min: f64,
    pub value_max: f64,
    pub wall_seconds: f64,
}

impl fmt::Display for GenerateSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "wrote {}", self.path.display())?;
        writeln!(f, "  sequences x snapshots x grid: {} x {} x {:?}", self.n_sequences, self.n_steps + 1, self.shape)?;
        writeln!(f, "  value range: [{:.6}, {:.6}]", self.value_min, self.value_max)?;
        write!(f, "  wall time: {:.2} s", self.wall_seconds)
    }
}

pub fn generate(config_path: &Path, out: &Path, opts: &RunOptions) -> CliResult<GenerateSummary> {
    let bytes = read_config_bytes(config_path)?;
    let mut cfg: GenerateConfig = read_json(config_path)?;
    if let Some(s) = opts.seed {
        cfg.initial_condition.seed = s;
    }
    let workers = check_workers(opts.workers.unwrap_or(1))?;
    create_dir(out)?;
    let manifest = ManifestBuilder::new("generate", Some(config_path), Some(cfg.initial_condition.seed), workers, out);
    let t0 = Instant::now();
    let ds = flame_core::evaluation::with_workers(workers, || {
        generate_trajectories(&cfg.solver, &cfg.initial_condition, cfg.n_sequences, cfg.n_steps)
    })??;
    let wall = t0.elapsed().as_secs_f64();
    let path = out.join(DATASET_FILE);
    ds.save(&path)?;
    let (lo, hi) = ds.value_range();
    let side = TrajectoryDataset::sidecar_path(&path);
    manifest.finish(&bytes, &[path.clone(), side])?;
    Ok(GenerateSummary {
        path,
        n_sequences: ds.n_sequences(),
        n_steps: ds.n_steps(),
        shape: ds.grid.shape(),
        value_min: lo,
        value_max: hi,
        wall_seconds: wall,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainSummary {
    pub kind: String,
    pub n_params: usize,
    pub epochs: usize,
    pub final_train_rel_l2: f64,
    pub final_valid_rel_l2: f64,
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
    pub wall_seconds: f64,
}

impl fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} ({} parameters), {} epochs", self.kind, self.n_params, self.epochs)?;
        writeln!(f, "  final train rel. L2 {:.6}, valid rel. L2 {:.6}", self.final_train_rel_l2, self.final_valid_rel_l2)?;
        if let (Some(e), Some(s)) = (self.best_epoch, self.best_score) {
            writeln!(f, "  best score {s:.6} after epoch {e}")?;
        }
        write!(f, "  wall time: {:.1} s", self.wall_seconds)
    }
}

fn save_atomic(ck: &Checkpoint, path: &Path) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    ck.save(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Loads a training config with its dataset and builds the model.
pub fn load_train_setup(config_path: &Path) -> CliResult<(TrainRunConfig, PathBuf, TrajectoryDataset, Model)> {
    let cfg: TrainRunConfig = read_json(config_path)?;
    let data_path = resolve(config_path, &cfg.dataset);
    let ds = TrajectoryDataset::load(&data_path).map_err(|e| CliError::from(e).context(data_path.display()))?;
    let model = Model::new(cfg.model.clone(), ds.grid)?;
    Ok((cfg, data_path, ds, model))
}

pub fn train(config_path: &Path, out: &Path, opts: &RunOptions) -> CliResult<TrainSummary> {
    let bytes = read_config_bytes(config_path)?;
    let (mut cfg, data_path, ds, model) = load_train_setup(config_path)?;
    if let Some(s) = opts.seed {
        cfg.train.seed = s;
    }
    if let Some(w) = opts.workers {
        cfg.train.workers = w;
    }
    check_workers(cfg.train.workers)?;
    cfg.train.validate(&model)?;
    let (train_ds, valid_ds) = if cfg.validation_fraction > 0.0 {
        let (t, v) = ds.clone().split_validation(cfg.validation_fraction)?;
        (t, Some(v))
    } else {
        (ds.clone(), None)
    };
    create_dir(out)?;
    let final_path = out.join(FINAL_CHECKPOINT);
    let best_path = out.join(BEST_CHECKPOINT);
    let history_path = out.join(HISTORY_FILE);

    let mut state = if opts.resume {
        resume_state(&model, &final_path, &best_path, &history_path)?
    } else {
        if final_path.exists() {
            return Err(CliError::config(format!(
                "{} already holds a training run; pass --resume to continue it",
                out.display()
            )));
        }
        TrainState::new(model.init_params(cfg.train.seed))
    };

    let meta = json!({
        "equation": ds.equation,
        "beta": ds.beta,
        "dt": ds.dt,
        "train_seed": cfg.train.seed,
    });
    let mut manifest = ManifestBuilder::new("train", Some(config_path), Some(cfg.train.seed), cfg.train.workers, out);
    manifest.input(&data_path)?;
    manifest.resumed(opts.resume);
    let t0 = Instant::now();
    let mut last_best = state.best.as_ref().map(|b| b.0);
    train_epochs(&model, &train_ds, valid_ds.as_ref(), &cfg.train, &mut state, |st| {
        let r = st.history.last().expect("one record per epoch");
        if !opts.quiet {
            println!(
                "epoch {:4}  lr {:.3e}  train {:.6}  valid {:.6}",
                r.epoch, r.lr, r.train_rel_l2, r.valid_rel_l2
            );
        }
        let mut ck = Checkpoint::new(&model, st.params.clone());
        ck.epoch = st.epoch;
        ck.optimizer = Some(st.optimizer.clone());
        ck.meta = meta.clone();
        save_atomic(&ck, &final_path).map_err(to_core)?;
        if let Some((e, score, p)) = &st.best {
            if last_best != Some(*e) {
                let mut b = Checkpoint::new(&model, p.clone());
                b.epoch = e + 1;
                let mut m = meta.clone();
                m["best_epoch"] = json!(e);
                m["best_score"] = json!(score);
                b.meta = m;
                save_atomic(&b, &best_path).map_err(to_core)?;
                last_best = Some(*e);
            }
        }
        save_history_csv(&history_path, &st.history)
    })?;
    let mut outputs = vec![final_path, history_path];
    if best_path.exists() {
        outputs.push(best_path);
    }
    manifest.finish(&bytes, &outputs)?;
    let last = state.history.last();
    Ok(TrainSummary {
        kind: model.config().kind().to_string(),
        n_params: model.n_params(),
        epochs: state.epoch,
        final_train_rel_l2: last.map_or(f64::NAN, |r| r.train_rel_l2),
        final_valid_rel_l2: last.map_or(f64::NAN, |r| r.valid_rel_l2),
        best_epoch: state.best.as_ref().map(|b| b.0),
        best_score: state.best.as_ref().map(|b| b.1),
        wall_seconds: t0.elapsed().as_secs_f64(),
    })
}

fn to_core(e: CliError) -> flame_core::Error {
    match e.code {
        crate::error::EXIT_CONFIG => flame_core::Error::Config(e.message),
        crate::error::EXIT_DIVERGENCE => flame_core::Error::Divergence(e.message),
        _ => flame_core::Error::Io(std::io::Error::other(e.message)),
    }
}

fn resume_state(model: &Model, final_path: &Path, best_path: &Path, history_path: &Path) -> CliResult<TrainState> {
    if !final_path.exists() {
        return Err(CliError::config(format!("--resume: no checkpoint at {}", final_path.display())));
    }
    let ck = Checkpoint::load(final_path)?;
    if &ck.model != model.config() || ck.grid != model.grid() {
        return Err(CliError::config("--resume: checkpoint model differs from the config"));
    }
    let optimizer = ck
        .optimizer
        .ok_or_else(|| CliError::config("--resume: checkpoint carries no optimizer state"))?;
    let file = std::fs::File::open(history_path).map_err(|e| CliError::io(format!("{}: {e}", history_path.display())))?;
    let mut history = read_history_csv(std::io::BufReader::new(file))?;
    if history.len() < ck.epoch {
        return Err(CliError::io("history is shorter than the checkpointed epoch count"));
    }
    history.truncate(ck.epoch);
    let best = if best_path.exists() {
        let b = Checkpoint::load(best_path)?;
        let epoch = b.meta["best_epoch"].as_u64();
        let score = b.meta["best_score"].as_f64();
        match (epoch, score) {
            (Some(e), Some(s)) if (e as usize) < ck.epoch => Some((e as usize, s, b.params)),
            _ => None,
        }
    } else {
        None
    };
    Ok(TrainState { params: ck.params, optimizer, epoch: ck.epoch, history, best })
}

/// Everything `evaluate` computes.
#[derive(Debug, Clone)]
pub struct EvaluationReport {
    pub kind: String,
    pub dt: f64,
    pub rollouts: Vec<Rollout>,
    pub references: Vec<Vec<Field>>,
    pub error_curve: MetricSeries,
    /// Error between reference instances `i` and `i + 1`.
    pub decorrelation: Option<MetricSeries>,
    pub front_length: MetricSeries,
    pub front_length_reference: MetricSeries,
    /// Over non-diverged rollouts inside the window; `None` if there are none.
    pub autocorrelation: Option<MetricSeries>,
    pub autocorrelation_reference: MetricSeries,
    pub window: std::ops::Range<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvaluationSummary {
    pub kind: String,
    pub instances: usize,
    pub steps: usize,
    pub window: [usize; 2],
    pub divergence: Vec<Option<usize>>,
    pub max_abs: f64,
    pub final_error: f64,
    pub front_length_window_mean: f64,
    pub front_length_reference_window_mean: f64,
    pub autocorrelation_max_deviation: Option<f64>,
}

impl EvaluationReport {
    pub fn max_abs(&self) -> f64 {
        self.rollouts
            .iter()
            .flat_map(|r| r.predictions.iter())
            .map(|f| f.values().iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { f64::INFINITY }))
            .fold(0.0, f64::max)
    }

    pub fn any_divergence(&self) -> bool {
        self.rollouts.iter().any(|r| r.divergence.is_some())
    }

    pub fn summary(&self) -> CliResult<EvaluationSummary> {
        let steps = self.error_curve.len() - 1;
        Ok(EvaluationSummary {
            kind: self.kind.clone(),
            instances: self.rollouts.len(),
            steps,
            window: [self.window.start, self.window.end],
            divergence: self.rollouts.iter().map(|r| r.divergence).collect(),
            max_abs: self.max_abs(),
            final_error: *self.error_curve.values.last().unwrap_or(&f64::NAN),
            front_length_window_mean: self.front_length.window_mean(self.window.clone())?,
            front_length_reference_window_mean: self.front_length_reference.window_mean(self.window.clone())?,
            autocorrelation_max_deviation: match &self.autocorrelation {
                Some(a) => Some(a.max_abs_deviation(&self.autocorrelation_reference)?),
                None => None,
            },
        })
    }
}

fn padded(mut s: MetricSeries, len: usize, dt: f64) -> MetricSeries {
    while s.values.len() < len {
        s.axis.push(s.values.len() as f64 * dt);
        s.values.push(f64::NAN);
    }
    s
}

/// Starting fields: seeded draws, optionally evolved by the solver first.
pub fn initial_states(cfg: &EvaluateConfig, workers: usize) -> CliResult<Vec<Field>> {
    let ic = &cfg.initial_condition;
    let draws = (0..cfg.instances as u64)
        .map(|i| {
            let spec = InitialConditionSpec { seed: derive_seed(ic.seed, i), ..ic.clone() };
            sample_initial_condition(&spec, cfg.solver.grid)
        })
        .collect::<flame_core::Result<Vec<_>>>()?;
    if cfg.warmup_steps == 0 {
        return Ok(draws);
    }
    let evolved = flame_core::evaluation::with_workers(workers, || {
        flame_core::evaluation::par_map(&draws, |f| simulate(&cfg.solver, f.clone(), cfg.warmup_steps).map(|mut t| t.pop().unwrap()))
    })?;
    Ok(evolved?)
}

/// Rolls `stepper` (or the solver itself) out against reference solves.
pub fn evaluate_with(stepper: Option<&dyn Stepper>, cfg: &EvaluateConfig, workers: usize) -> CliResult<EvaluationReport> {
    cfg.solver.validate()?;
    if cfg.instances == 0 {
        return Err(CliError::config("instances must be at least 1"));
    }
    let window = cfg.window()?;
    let dt = cfg.solver.output_interval;
    let own = SolverStepper { config: cfg.solver, steps_per_call: 1 };
    let stepper: &dyn Stepper = stepper.unwrap_or(&own);
    if stepper.grid() != cfg.solver.grid {
        return Err(CliError::config(format!(
            "model grid {:?} differs from the solver grid {:?}",
            stepper.grid(),
            cfg.solver.grid
        )));
    }
    let starts = initial_states(cfg, workers)?;
    let references = flame_core::evaluation::with_workers(workers, || {
        flame_core::evaluation::par_map(&starts, |f| simulate(&cfg.solver, f.clone(), cfg.steps))
    })??;
    let rollouts = rollout_ensemble(stepper, &starts, cfg.steps, workers)?;

    let len = cfg.steps + 1;
    let mut errs = Vec::new();
    let mut fl = Vec::new();
    let mut fl_ref = Vec::new();
    for (r, reference) in rollouts.iter().zip(&references) {
        errs.push(error_curve(r, reference, dt, cfg.error)?);
        fl.push(padded(front_length_series(r, dt)?, len, dt));
        fl_ref.push(front_length_series(&as_rollout(reference), dt)?);
    }
    let decorrelation = if references.len() >= 2 {
        let n = references.len();
        let pairs = (0..n)
            .map(|i| error_curve(&as_rollout(&references[(i + 1) % n]), &references[i], dt, cfg.error))
            .collect::<flame_core::Result<Vec<_>>>()?;
        Some(ensemble_average(&pairs)?)
    } else {
        None
    };
    let ref_snaps: Vec<&Field> = references.iter().flat_map(|t| t[window.clone()].iter()).collect();
    let model_snaps: Vec<&Field> = rollouts
        .iter()
        .filter(|r| r.divergence.is_none())
        .flat_map(|r| window.clone().map(move |t| r.at(t)))
        .collect();
    let model_autocorr = if model_snaps.is_empty() { None } else { Some(autocorrelation(&model_snaps, cfg.autocorrelation)?) };
    Ok(EvaluationReport {
        kind: stepper.kind(),
        dt,
        error_curve: ensemble_average(&errs)?,
        decorrelation,
        front_length: ensemble_average(&fl)?,
        front_length_reference: ensemble_average(&fl_ref)?,
        autocorrelation: model_autocorr,
        autocorrelation_reference: autocorrelation(&ref_snaps, cfg.autocorrelation)?,
        rollouts,
        references,
        window,
    })
}

fn as_rollout(t: &[Field]) -> Rollout {
    Rollout {
        kind: "solver".into(),
        initial: t[0].clone(),
        predictions: t[1..].to_vec(),
        divergence: None,
        calls: t.len() - 1,
    }
}

/// Loads the model named by an evaluation config, checking that it was
/// trained at the solver's snapshot spacing.
pub fn load_checkpoint_model(path: &Path, cfg: &EvaluateConfig) -> CliResult<(Model, Checkpoint)> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::from(e).context(path.display()))?;
    let model = ck.model()?;
    if let Some(dt) = ck.meta.get("dt").and_then(|v| v.as_f64()) {
        if (dt - cfg.solver.output_interval).abs() > 1e-12 {
            return Err(CliError::config(format!(
                "model was trained at dt = {dt} but the protocol uses {}",
                cfg.solver.output_interval
            )));
        }
    }
    Ok((model, ck))
}

pub const EVALUATION_FILES: [&str; 6] = [
    "error_curve.csv",
    "error_curve_reference.csv",
    "front_length.csv",
    "front_length_reference.csv",
    "autocorrelation.csv",
    "autocorrelation_reference.csv",
];

pub fn evaluate(config_path: &Path, out: &Path, opts: &RunOptions) -> CliResult<EvaluationSummary> {
    let bytes = read_config_bytes(config_path)?;
    let mut cfg: EvaluateConfig = read_json(config_path)?;
    if let Some(s) = opts.seed {
        cfg.initial_condition.seed = s;
    }
    let workers = check_workers(opts.workers.unwrap_or(1))?;
    let mut manifest = ManifestBuilder::new("evaluate", Some(config_path), Some(cfg.initial_condition.seed), workers, out);
    let loaded = match &cfg.checkpoint {
        Some(p) => {
            let path = resolve(config_path, p);
            manifest.input(&path)?;
            Some(load_checkpoint_model(&path, &cfg)?)
        }
        None => None,
    };
    let stepper = loaded.as_ref().map(|(m, ck)| ModelStepper { model: m, params: &ck.params });
    let report = evaluate_with(stepper.as_ref().map(|s| s as &dyn Stepper), &cfg, workers)?;
    create_dir(out)?;
    let mut outputs = Vec::new();
    let mut put = |name: &str, s: Option<&MetricSeries>| -> CliResult<()> {
        if let Some(s) = s {
            let p = out.join(name);
            s.save_csv(&p)?;
            outputs.push(p);
        }
        Ok(())
    };
    put(EVALUATION_FILES[0], Some(&report.error_curve))?;
    put(EVALUATION_FILES[1], report.decorrelation.as_ref())?;
    put(EVALUATION_FILES[2], Some(&report.front_length))?;
    put(EVALUATION_FILES[3], Some(&report.front_length_reference))?;
    put(EVALUATION_FILES[4], report.autocorrelation.as_ref())?;
    put(EVALUATION_FILES[5], Some(&report.autocorrelation_reference))?;
    let summary = report.summary()?;
    let sp = out.join("summary.json");
    write_json(&sp, &summary)?;
    outputs.push(sp);
    manifest.finish(&bytes, &outputs)?;
    Ok(summary)
}

/// Groups metric CSVs by file stem (a `_reference` suffix joins its base
/// group) and renders one SVG per group. Series are labelled by the name
/// of the directory holding them.
pub fn plot(inputs: &[PathBuf], out: &Path) -> CliResult<Vec<PathBuf>> {
    if inputs.is_empty() {
        return Err(CliError::config("plot needs at least one CSV file"));
    }
    let mut groups: Vec<(String, Vec<(String, MetricSeries)>)> = Vec::new();
    let mut manifest = ManifestBuilder::new("plot", None, None, 1, out);
    for path in inputs {
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| CliError::config(format!("{}: not a file name", path.display())))?;
        let (group, is_ref) = match stem.strip_suffix("_reference") {
            Some(g) => (g.to_string(), true),
            None => (stem.to_string(), false),
        };
        let kind = if group.starts_with("autocorrelation") {
            MetricKind::Autocorrelation
        } else if group.starts_with("front_length") {
            MetricKind::FrontLength
        } else {
            MetricKind::ErrorCurve
        };
        let file = std::fs::File::open(path).map_err(|e| CliError::io(format!("{}: {e}", path.display())))?;
        let series = MetricSeries::read_csv(std::io::BufReader::new(file), kind)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let label = if is_ref {
            if kind == MetricKind::ErrorCurve { "reference pair".to_string() } else { "reference".to_string() }
        } else {
            path.parent()
                .and_then(|p| p.file_name())
                .and_then(|s| s.to_str())
                .unwrap_or(stem)
                .to_string()
        };
        manifest.input(path)?;
        let slot = match groups.iter().position(|(g, _)| *g == group) {
            Some(i) => i,
            None => {
                groups.push((group, Vec::new()));
                groups.len() - 1
            }
        };
        if !groups[slot].1.iter().any(|(l, _)| *l == label) {
            groups[slot].1.push((label, series));
        }
    }
    create_dir(out)?;
    let mut written = Vec::new();
    for (group, series) in &groups {
        let kind = series[0].1.kind;
        let y_label = match kind {
            MetricKind::ErrorCurve => "relative L2 error",
            MetricKind::FrontLength => "normalised front length",
            MetricKind::Autocorrelation => "R(r)",
        };
        let doc = svg::line_plot(group, kind.axis_label(), y_label, series);
        let p = out.join(format!("{group}.svg"));
        std::fs::write(&p, doc)?;
        written.push(p);
    }
    manifest.finish(&[], &written)?;
    Ok(written)
}

pub fn manifest_path(dir: &Path) -> PathBuf {
    dir.join(MANIFEST_FILE)
}
