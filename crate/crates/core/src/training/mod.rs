//! Optimization of model parameters on 1-to-n trajectory windows.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamVector, Tape, Var};
use crate::error::{Error, Result};
use crate::operators::Model;
use crate::solver::{derive_seed, TrajectoryDataset};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    Double,
    Single,
}

fn d_lr() -> f64 {
    0.0025
}
fn d_wd() -> f64 {
    1e-4
}
fn d_step() -> usize {
    100
}
fn d_gamma() -> f64 {
    0.5
}
fn d_clip() -> f64 {
    30.0
}
fn d_stride() -> usize {
    1
}
fn d_workers() -> usize {
    1
}
fn d_precision() -> Precision {
    Precision::Double
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "d_lr")]
    pub learning_rate: f64,
    #[serde(default = "d_wd")]
    pub weight_decay: f64,
    #[serde(default = "d_step")]
    pub lr_step: usize,
    #[serde(default = "d_gamma")]
    pub lr_gamma: f64,
    #[serde(default = "d_clip")]
    pub clip_norm: f64,
    /// Supervision horizon.
    pub n: usize,
    /// Roll a single-step model out `n` times inside the loss.
    #[serde(default)]
    pub recurrent: bool,
    pub seed: u64,
    #[serde(default = "d_precision")]
    pub precision: Precision,
    /// Offset spacing between consecutive windows of one sequence.
    #[serde(default = "d_stride")]
    pub window_stride: usize,
    #[serde(default = "d_workers")]
    pub workers: usize,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, n: usize, seed: u64) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate: d_lr(),
            weight_decay: d_wd(),
            lr_step: d_step(),
            lr_gamma: d_gamma(),
            clip_norm: d_clip(),
            n,
            recurrent: false,
            seed,
            precision: Precision::Double,
            window_stride: 1,
            workers: 1,
        }
    }

    pub fn validate(&self, model: &Model) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.n == 0 || self.window_stride == 0 || self.workers == 0 {
            return Err(Error::config("epochs, batch_size, n, window_stride and workers must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.lr_gamma > 0.0 && self.clip_norm > 0.0 && self.weight_decay >= 0.0) {
            return Err(Error::config("learning_rate, lr_gamma and clip_norm must be positive, weight_decay non-negative"));
        }
        if self.lr_step == 0 {
            return Err(Error::config("lr_step must be positive"));
        }
        if self.precision == Precision::Single {
            return Err(Error::config("single-precision training is not available; use \"double\""));
        }
        let m = model.n();
        if self.recurrent && m != 1 {
            return Err(Error::config(format!("recurrent loss needs a single-step model, got n = {m}")));
        }
        if !self.recurrent && m != self.n {
            return Err(Error::config(format!("training horizon n = {} does not match model n = {m}", self.n)));
        }
        Ok(())
    }
}

/// Adam moments aligned with the parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0 }
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// `‖a − b‖ / ‖b‖`.
pub fn relative_l2(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::config(format!("relative_l2 on lengths {} and {}", a.len(), b.len())));
    }
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nb == 0.0 {
        return Err(Error::config("relative_l2 against a zero-norm target"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt() / nb)
}

/// Mean over steps of the per-step relative L2 error.
pub fn loss_multistep(tape: &mut Tape, pred: &[Var], target: &[Var]) -> Result<Var> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::config(format!("{} predictions for {} targets", pred.len(), target.len())));
    }
    let parts = pred.iter().zip(target).map(|(&p, &t)| tape.rel_l2(p, t)).collect::<Result<Vec<_>>>()?;
    let s = tape.sum(&parts)?;
    tape.scale(s, 1.0 / parts.len() as f64)
}

/// Applies a single-step model `targets.len()` times from `input`,
/// feeding outputs back, and scores the chain with [`loss_multistep`].
pub fn loss_recurrent(tape: &mut Tape, model: &Model, params: &ParamVector, input: Var, targets: &[Var]) -> Result<Var> {
    if model.n() != 1 {
        return Err(Error::config("recurrent loss needs a single-step model"));
    }
    let mut preds = Vec::with_capacity(targets.len());
    let mut x = input;
    for _ in 0..targets.len() {
        x = model.forward(tape, params, x)?[0];
        preds.push(x);
    }
    loss_multistep(tape, &preds, targets)
}

/// Bias-corrected Adam with decoupled weight decay:
/// `θ ← θ − lr·wd·θ − lr·m̂/(√v̂ + ε)`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::config("adam_step on misaligned vectors"));
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient at parameter index {i}")));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mhat = *m / c1;
        let vhat = *v / c2;
        *p -= lr * weight_decay * *p;
        *p -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Step decay: `lr · γ^⌊epoch / step⌋`.
pub fn lr_at_epoch(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.learning_rate * cfg.lr_gamma.powi((epoch / cfg.lr_step) as i32)
}

/// Rescales `grads` to norm `max_norm` if larger; returns the original norm.
pub fn clip_gradients(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Input snapshot `(sequence, offset)`; targets are the next `n` snapshots.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Window {
    pub sequence: usize,
    pub offset: usize,
}

/// Every admissible window, sequence-major.
pub fn windows(ds: &TrajectoryDataset, n: usize, stride: usize) -> Vec<Window> {
    let steps = ds.n_steps();
    if steps < n {
        return Vec::new();
    }
    (0..ds.n_sequences())
        .flat_map(|s| (0..=steps - n).step_by(stride).map(move |o| Window { sequence: s, offset: o }))
        .collect()
}

fn window_tape(
    model: &Model,
    params: &ParamVector,
    ds: &TrajectoryDataset,
    w: Window,
    n: usize,
    recurrent: bool,
) -> Result<(Tape, Var)> {
    let seq = &ds.sequences[w.sequence];
    let mut tape = Tape::new();
    let x = tape.field(&seq[w.offset]);
    let targets: Vec<Var> = (1..=n).map(|j| tape.field(&seq[w.offset + j])).collect();
    let loss = if recurrent {
        loss_recurrent(&mut tape, model, params, x, &targets)?
    } else {
        let preds = model.forward(&mut tape, params, x)?;
        loss_multistep(&mut tape, &preds, &targets)?
    };
    Ok((tape, loss))
}

/// Loss and gradient of one window.
pub fn window_gradient(
    model: &Model,
    params: &ParamVector,
    ds: &TrajectoryDataset,
    w: Window,
    cfg: &TrainConfig,
) -> Result<(f64, Vec<f64>)> {
    let (tape, loss) = window_tape(model, params, ds, w, cfg.n, cfg.recurrent)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::Divergence(format!(
            "non-finite loss on sequence {} offset {}",
            w.sequence, w.offset
        )));
    }
    Ok((value, tape.backward(loss, params.len())?))
}

/// Mean window loss without gradients.
pub fn evaluate_loss(
    model: &Model,
    params: &ParamVector,
    ds: &TrajectoryDataset,
    cfg: &TrainConfig,
    pool: &rayon::ThreadPool,
) -> Result<f64> {
    let ws = windows(ds, cfg.n, cfg.window_stride);
    if ws.is_empty() {
        return Ok(f64::NAN);
    }
    let losses = pool.install(|| {
        ws.par_iter()
            .map(|&w| window_tape(model, params, ds, w, cfg.n, cfg.recurrent).map(|(t, l)| t.scalar(l)))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// One row of the loss history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Epoch mean of the window losses seen during the epoch.
    pub train_rel_l2: f64,
    /// Mean window loss on the validation set after the epoch.
    pub valid_rel_l2: f64,
}

pub fn write_history_csv(w: &mut impl Write, rows: &[EpochRecord]) -> Result<()> {
    writeln!(w, "epoch,lr,train_rel_l2,valid_rel_l2")?;
    for r in rows {
        writeln!(w, "{},{:e},{:e},{:e}", r.epoch, r.lr, r.train_rel_l2, r.valid_rel_l2)?;
    }
    Ok(())
}

pub fn save_history_csv(path: &Path, rows: &[EpochRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_history_csv(&mut buf, rows)?;
    std::fs::write(path, buf)?;
    Ok(())
}

/// Parses what [`write_history_csv`] writes.
pub fn read_history_csv(r: impl std::io::BufRead) -> Result<Vec<EpochRecord>> {
    let mut lines = r.lines();
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim) != Some("epoch,lr,train_rel_l2,valid_rel_l2") {
        return Err(Error::Format("line 1: missing history header".into()));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Format(format!("line {}: malformed history row {line:?}", i + 2));
        let c: Vec<&str> = line.trim().split(',').collect();
        if c.len() != 4 {
            return Err(bad());
        }
        rows.push(EpochRecord {
            epoch: c[0].parse().map_err(|_| bad())?,
            lr: c[1].parse().map_err(|_| bad())?,
            train_rel_l2: c[2].parse().map_err(|_| bad())?,
            valid_rel_l2: c[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(rows)
}

/// Mutable training state; checkpoints persist it for resumption.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParamVector,
    pub optimizer: AdamState,
    /// Epochs completed.
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
    pub best: Option<(usize, f64, ParamVector)>,
}

impl TrainState {
    pub fn new(params: ParamVector) -> Self {
        let n = params.len();
        TrainState { params, optimizer: AdamState::new(n), epoch: 0, history: Vec::new(), best: None }
    }
}

/// Runs epochs `state.epoch..cfg.epochs`, calling `on_epoch` after each.
///
/// Windows are reshuffled every epoch with a generator derived from the
/// seed and the epoch index, so a resumed run reproduces an unbroken one.
/// Per-window gradients are summed in window order, which keeps results
/// independent of the worker count.
pub fn train(
    model: &Model,
    train_ds: &TrajectoryDataset,
    valid_ds: Option<&TrajectoryDataset>,
    cfg: &TrainConfig,
    state: &mut TrainState,
    mut on_epoch: impl FnMut(&TrainState) -> Result<()>,
) -> Result<()> {
    cfg.validate(model)?;
    if train_ds.grid != model.grid() || valid_ds.is_some_and(|v| v.grid != model.grid()) {
        return Err(Error::config(format!(
            "dataset grid {:?} does not match model grid {:?}",
            train_ds.grid,
            model.grid()
        )));
    }
    let mut ws = windows(train_ds, cfg.n, cfg.window_stride);
    if ws.is_empty() {
        return Err(Error::config(format!(
            "no training windows: {} steps per sequence, horizon {}",
            train_ds.n_steps(),
            cfg.n
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;

    while state.epoch < cfg.epochs {
        let epoch = state.epoch;
        let lr = lr_at_epoch(epoch, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, epoch as u64));
        ws.sort_by_key(|w| (w.sequence, w.offset));
        ws.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        for batch in ws.chunks(cfg.batch_size) {
            let params = &state.params;
            let results = pool.install(|| {
                batch
                    .par_iter()
                    .map(|&w| window_gradient(model, params, train_ds, w, cfg))
                    .collect::<Result<Vec<_>>>()
            })?;
            let mut grad = vec![0.0; params.len()];
            for (l, g) in &results {
                loss_sum += l;
                grad.iter_mut().zip(g).for_each(|(a, b)| *a += b);
            }
            let inv = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            clip_gradients(&mut grad, cfg.clip_norm);
            adam_step(state.params.values_mut(), &grad, &mut state.optimizer, lr, cfg.weight_decay)?;
        }
        if let Some(i) = state.params.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("parameter {i} became non-finite in epoch {epoch}")));
        }
        let train_loss = loss_sum / ws.len() as f64;
        let valid_loss = match valid_ds {
            Some(v) => evaluate_loss(model, &state.params, v, cfg, &pool)?,
            None => f64::NAN,
        };
        let score = if valid_loss.is_nan() { train_loss } else { valid_loss };
        if state.best.as_ref().is_none_or(|(_, b, _)| score < *b) {
            state.best = Some((epoch, score, state.params.clone()));
        }
        state.history.push(EpochRecord { epoch, lr, train_rel_l2: train_loss, valid_rel_l2: valid_loss });
        state.epoch += 1;
        on_epoch(state)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
