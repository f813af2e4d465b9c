//! Recurrent rollouts and the diagnostics computed on them.

use std::io::{BufRead, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamVector;
use crate::error::{Error, Result};
use crate::operators::Model;
use crate::solver::{Integrator, SolverConfig};
use crate::spectral::{fft_forward, fft_inverse, grad, signed_wavenumber, Field, Grid};
use crate::training::relative_l2;

/// Largest `|φ|` a rollout may reach before it is flagged as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// Anything that maps a snapshot to the next `steps_per_call` snapshots.
pub trait Stepper: Sync {
    fn kind(&self) -> String;
    fn grid(&self) -> Grid;
    fn steps_per_call(&self) -> usize;
    fn call(&self, phi: &Field) -> Result<Vec<Field>>;
}

/// A trained model with fixed parameters.
pub struct ModelStepper<'a> {
    pub model: &'a Model,
    pub params: &'a ParamVector,
}

impl Stepper for ModelStepper<'_> {
    fn kind(&self) -> String {
        self.model.config().kind().to_string()
    }
    fn grid(&self) -> Grid {
        self.model.grid()
    }
    fn steps_per_call(&self) -> usize {
        self.model.n()
    }
    fn call(&self, phi: &Field) -> Result<Vec<Field>> {
        self.model.predict(self.params, phi)
    }
}

/// The reference solver posing as a model: each call advances
/// `steps_per_call` output intervals.
pub struct SolverStepper {
    pub config: SolverConfig,
    pub steps_per_call: usize,
}

impl Stepper for SolverStepper {
    fn kind(&self) -> String {
        "solver".into()
    }
    fn grid(&self) -> Grid {
        self.config.grid
    }
    fn steps_per_call(&self) -> usize {
        self.steps_per_call
    }
    fn call(&self, phi: &Field) -> Result<Vec<Field>> {
        let mut integ = Integrator::new(self.config)?;
        let mut out: Vec<Field> = Vec::with_capacity(self.steps_per_call);
        for _ in 0..self.steps_per_call {
            let next = integ.advance_output(out.last().unwrap_or(phi))?;
            out.push(next);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub kind: String,
    pub initial: Field,
    /// `predictions[t]` approximates the state after `t + 1` steps.
    pub predictions: Vec<Field>,
    /// First step (1-based) whose values left the finite range below
    /// [`DIVERGENCE_THRESHOLD`]; the rollout stops there.
    pub divergence: Option<usize>,
    pub calls: usize,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    /// Snapshot at step `t`, with step 0 the initial field.
    pub fn at(&self, t: usize) -> &Field {
        if t == 0 {
            &self.initial
        } else {
            &self.predictions[t - 1]
        }
    }

    /// Initial field followed by the predictions.
    pub fn trajectory(&self) -> Vec<&Field> {
        std::iter::once(&self.initial).chain(&self.predictions).collect()
    }
}

fn diverged(f: &Field) -> bool {
    f.values().iter().any(|v| !(v.abs() <= DIVERGENCE_THRESHOLD))
}

/// Rolls `stepper` out for `total_steps` steps, each call restarting from
/// the last snapshot it produced.
pub fn rollout(stepper: &dyn Stepper, phi0: &Field, total_steps: usize) -> Result<Rollout> {
    if phi0.grid() != stepper.grid() || phi0.channels() != 1 {
        return Err(Error::config("initial field does not match the model grid"));
    }
    let mut r = Rollout {
        kind: stepper.kind(),
        initial: phi0.clone(),
        predictions: Vec::with_capacity(total_steps),
        divergence: None,
        calls: 0,
    };
    while r.predictions.len() < total_steps {
        let out = match stepper.call(r.at(r.predictions.len())) {
            Ok(out) => out,
            Err(Error::Divergence(_)) => {
                r.divergence = Some(r.predictions.len() + 1);
                break;
            }
            Err(e) => return Err(e),
        };
        r.calls += 1;
        if out.is_empty() {
            return Err(Error::config("stepper returned no snapshots"));
        }
        for f in out {
            if r.predictions.len() == total_steps {
                break;
            }
            let bad = diverged(&f);
            r.predictions.push(f);
            if bad {
                r.divergence = Some(r.predictions.len());
                return Ok(r);
            }
        }
    }
    Ok(r)
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Order-preserving parallel map on the current pool.
pub fn par_map<T: Sync, U: Send>(items: &[T], f: impl Fn(&T) -> Result<U> + Sync + Send) -> Result<Vec<U>> {
    items.par_iter().map(f).collect()
}

/// Independent rollouts, one per initial field, on a pool of `workers`
/// threads. Output order follows the input order.
pub fn rollout_ensemble(stepper: &dyn Stepper, initial: &[Field], total_steps: usize, workers: usize) -> Result<Vec<Rollout>> {
    with_workers(workers, || par_map(initial, |phi| rollout(stepper, phi, total_steps)))?
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    ErrorCurve,
    FrontLength,
    Autocorrelation,
}

impl MetricKind {
    pub fn axis_label(self) -> &'static str {
        match self {
            MetricKind::Autocorrelation => "r",
            _ => "t",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSeries {
    pub kind: MetricKind,
    /// Time or lag.
    pub axis: Vec<f64>,
    pub values: Vec<f64>,
    /// Number of instances averaged into each value.
    pub n_ensemble: usize,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean of `values[range]`.
    pub fn window_mean(&self, range: std::ops::Range<usize>) -> Result<f64> {
        if range.start >= range.end || range.end > self.values.len() {
            return Err(Error::config(format!("window {range:?} outside a series of length {}", self.len())));
        }
        let n = range.len();
        Ok(self.values[range].iter().sum::<f64>() / n as f64)
    }

    pub fn max_abs_deviation(&self, other: &MetricSeries) -> Result<f64> {
        if self.axis != other.axis {
            return Err(Error::config("series have different axes"));
        }
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "axis,value,n_ensemble")?;
        for (a, v) in self.axis.iter().zip(&self.values) {
            writeln!(w, "{a},{v},{}", self.n_ensemble)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Parses what [`MetricSeries::write_csv`] writes. Errors carry the
    /// 1-based line number.
    pub fn read_csv(r: impl BufRead, kind: MetricKind) -> Result<Self> {
        let mut lines = r.lines();
        match lines.next() {
            Some(Ok(h)) if h.trim() == "axis,value,n_ensemble" => {}
            Some(Ok(h)) => return Err(Error::Format(format!("line 1: unexpected header {h:?}"))),
            Some(Err(e)) => return Err(e.into()),
            None => return Err(Error::Format("line 1: empty metric file".into())),
        }
        let mut s = MetricSeries { kind, axis: Vec::new(), values: Vec::new(), n_ensemble: 0 };
        for (i, line) in lines.enumerate() {
            let line = line?;
            let no = i + 2;
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.trim().split(',').collect();
            let bad = || Error::Format(format!("line {no}: expected axis,value,n_ensemble, got {line:?}"));
            if cols.len() != 3 {
                return Err(bad());
            }
            let a: f64 = cols[0].parse().map_err(|_| bad())?;
            let v: f64 = cols[1].parse().map_err(|_| bad())?;
            let n: usize = cols[2].parse().map_err(|_| bad())?;
            if s.axis.is_empty() {
                s.n_ensemble = n;
            } else if n != s.n_ensemble {
                return Err(Error::Format(format!("line {no}: n_ensemble changes from {} to {n}", s.n_ensemble)));
            }
            s.axis.push(a);
            s.values.push(v);
        }
        if s.values.is_empty() {
            return Err(Error::Format("metric file has a header but no rows".into()));
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorOptions {
    /// Compare fluctuation fields: each snapshot's spatial mean is removed
    /// from both sides first.
    pub subtract_mean: bool,
}

fn fluctuation(v: &[f64]) -> Vec<f64> {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - m).collect()
}

/// Per-step relative L2 error of a rollout against a reference trajectory
/// that includes the initial snapshot. Steps past a divergence are NaN.
pub fn error_curve(pred: &Rollout, reference: &[Field], dt: f64, opts: ErrorOptions) -> Result<MetricSeries> {
    let steps = reference.len().checked_sub(1).ok_or_else(|| Error::config("empty reference trajectory"))?;
    let complete = pred.len() == steps;
    let cut_short = pred.divergence.is_some() && pred.len() <= steps;
    if !complete && !cut_short {
        return Err(Error::config(format!(
            "rollout has {} steps but the reference has {steps}",
            pred.len()
        )));
    }
    let mut values = Vec::with_capacity(steps + 1);
    for (t, r) in reference.iter().enumerate() {
        if t > pred.len() {
            values.push(f64::NAN);
            continue;
        }
        let p = pred.at(t);
        if p.grid() != r.grid() {
            return Err(Error::config(format!("grid mismatch at step {t}")));
        }
        let e = if opts.subtract_mean {
            relative_l2(&fluctuation(p.values()), &fluctuation(r.values()))?
        } else {
            relative_l2(p.values(), r.values())?
        };
        values.push(e);
    }
    Ok(MetricSeries {
        kind: MetricKind::ErrorCurve,
        axis: (0..=steps).map(|t| t as f64 * dt).collect(),
        values,
        n_ensemble: 1,
    })
}

/// Pointwise mean over series that share an axis.
pub fn ensemble_average(list: &[MetricSeries]) -> Result<MetricSeries> {
    let first = list.first().ok_or_else(|| Error::config("empty ensemble"))?;
    let mut values = vec![0.0; first.len()];
    let mut weight = 0usize;
    for s in list {
        if s.kind != first.kind || s.axis != first.axis {
            return Err(Error::config("ensemble members have different kinds or axes"));
        }
        for (acc, v) in values.iter_mut().zip(&s.values) {
            *acc += v * s.n_ensemble as f64;
        }
        weight += s.n_ensemble;
    }
    values.iter_mut().for_each(|v| *v /= weight as f64);
    Ok(MetricSeries { kind: first.kind, axis: first.axis.clone(), values, n_ensemble: weight })
}

/// Mean of `√(1 + |∇φ|²)` over the grid; a flat front gives 1.
pub fn front_length(phi: &Field) -> Result<f64> {
    if phi.channels() != 1 {
        return Err(Error::config("front length needs a single-channel field"));
    }
    let g = grad(phi);
    let n = phi.grid().len();
    let total: f64 = (0..n)
        .map(|i| (1.0 + g.iter().map(|c| c.values()[i] * c.values()[i]).sum::<f64>()).sqrt())
        .sum();
    Ok(total / n as f64)
}

pub fn front_length_series(r: &Rollout, dt: f64) -> Result<MetricSeries> {
    let traj = r.trajectory();
    Ok(MetricSeries {
        kind: MetricKind::FrontLength,
        axis: (0..traj.len()).map(|t| t as f64 * dt).collect(),
        values: traj.into_iter().map(front_length).collect::<Result<_>>()?,
        n_ensemble: 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AutocorrOptions {
    /// Remove each snapshot's spatial mean first.
    pub subtract_mean: bool,
}

impl Default for AutocorrOptions {
    fn default() -> Self {
        AutocorrOptions { subtract_mean: true }
    }
}

/// Normalised spatial autocorrelation `R(r)`, averaged over snapshots, at
/// lags `r = j h` for `j = 0..=p/2`. In 2D the lag map is averaged over
/// shells `round(|r|/h) = j`.
pub fn autocorrelation(fields: &[&Field], opts: AutocorrOptions) -> Result<MetricSeries> {
    let first = fields.first().ok_or_else(|| Error::config("autocorrelation of an empty ensemble"))?;
    let grid = first.grid();
    let p = grid.points();
    let half = p / 2;
    let mut acc = vec![0.0; half + 1];
    for (i, f) in fields.iter().enumerate() {
        if f.grid() != grid || f.channels() != 1 {
            return Err(Error::config(format!("snapshot {i} is not a single-channel field on {grid:?}")));
        }
        let r = correlation_map(f, opts)?;
        let shells = radial_mean(&r, grid);
        for (a, v) in acc.iter_mut().zip(shells) {
            *a += v;
        }
    }
    let n = fields.len();
    let h = grid.spacing();
    Ok(MetricSeries {
        kind: MetricKind::Autocorrelation,
        axis: (0..=half).map(|j| j as f64 * h).collect(),
        values: acc.into_iter().map(|v| v / n as f64).collect(),
        n_ensemble: n,
    })
}

/// `C(r) / C(0)` on the full lag grid.
fn correlation_map(f: &Field, opts: AutocorrOptions) -> Result<Vec<f64>> {
    let mean = if opts.subtract_mean { f.mean() } else { 0.0 };
    let centred = Field::new(f.grid(), 1, f.values().iter().map(|v| v - mean).collect())?;
    let mut s = fft_forward(&centred);
    s.coeffs_mut().iter_mut().for_each(|c| *c = Complex64::new(c.norm_sqr(), 0.0));
    let c = fft_inverse(&s).into_values();
    let c0 = c[0];
    if !(c0 > 0.0) {
        return Err(Error::config("autocorrelation of a constant snapshot is undefined"));
    }
    // round-off can push |C(r)| a few ulps past C(0)
    Ok(c.iter().enumerate().map(|(i, v)| if i == 0 { 1.0 } else { (v / c0).clamp(-1.0, 1.0) }).collect())
}

fn radial_mean(r: &[f64], grid: Grid) -> Vec<f64> {
    let p = grid.points();
    let half = p / 2;
    if grid.dim() == 1 {
        return r[..=half].to_vec();
    }
    let mut sum = vec![0.0; half + 1];
    let mut count = vec![0usize; half + 1];
    for i in 0..p {
        let di = signed_wavenumber(i, p) as f64;
        for j in 0..p {
            let dj = signed_wavenumber(j, p) as f64;
            let shell = (di * di + dj * dj).sqrt().round() as usize;
            if shell <= half {
                sum[shell] += r[i * p + j];
                count[shell] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}
