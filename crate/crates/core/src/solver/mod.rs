//! Pseudo-spectral reference solver for the MS and KS front equations and
//! the trajectory-dataset generator.
//!
//! Both equations are written as `φ_t = L φ + N(φ)` with the linear part
//! diagonal in Fourier space (`ω(κ)` from [`dispersion_symbol`]) and
//! `N(φ) = -c |∇φ|²`, `c = τ/(2β²)` for MS and `1/(2β²)` for KS. The linear
//! part is integrated exactly through an integrating factor; the nonlinear
//! part with classical fourth-order Runge-Kutta.

mod dataset;
mod initial;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{dispersion_symbol, plan, tau, Equation, Field, Grid, Mode, RealFftNd};

pub use dataset::{DatasetManifest, TrajectoryDataset, DATASET_MAGIC, DATASET_VERSION};
pub use initial::{sample_initial_condition, InitialConditionKind, InitialConditionSpec};

/// Settings of one reference simulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub equation: Equation,
    pub beta: f64,
    pub grid: Grid,
    /// Solver sub-step.
    pub dt_internal: f64,
    /// Spacing between stored snapshots; an integer multiple of `dt_internal`.
    pub output_interval: f64,
    #[serde(default)]
    pub dealias: bool,
}

impl SolverConfig {
    /// Default sub-stepping: 5 sub-steps per output in 1D, 4 in 2D.
    pub fn new(equation: Equation, beta: f64, grid: Grid, output_interval: f64) -> Result<Self> {
        let k = if grid.dim() == 1 { 5.0 } else { 4.0 };
        let cfg = SolverConfig {
            equation,
            beta,
            grid,
            dt_internal: output_interval / k,
            output_interval,
            dealias: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.beta > (self.grid.points() / 2) as f64 {
            return Err(Error::config(format!(
                "beta = {} exceeds the largest resolvable wave number p/2 = {}",
                self.beta,
                self.grid.points() / 2
            )));
        }
        if !(self.dt_internal > 0.0) || !(self.output_interval > 0.0) {
            return Err(Error::config("time steps must be positive"));
        }
        let k = self.output_interval / self.dt_internal;
        if (k - k.round()).abs() > 1e-9 * k.max(1.0) || k.round() < 1.0 {
            return Err(Error::config(format!(
                "output_interval {} is not an integer multiple of dt_internal {}",
                self.output_interval, self.dt_internal
            )));
        }
        Ok(())
    }

    /// Number of sub-steps per stored snapshot.
    pub fn substeps(&self) -> usize {
        (self.output_interval / self.dt_internal).round() as usize
    }

    /// Coefficient `c` of the nonlinear term `-c |∇φ|²`.
    pub fn nonlinear_coefficient(&self) -> f64 {
        let b2 = self.beta * self.beta;
        match self.equation {
            Equation::Ms => tau(self.beta) / (2.0 * b2),
            Equation::Ks => 1.0 / (2.0 * b2),
        }
    }
}

/// Fixed-step integrating-factor RK4 integrator with cached symbols.
pub struct Integrator {
    config: SolverConfig,
    plan: std::sync::Arc<RealFftNd>,
    modes: Vec<Mode>,
    half_step: Vec<f64>,
    full_step: Vec<f64>,
    keep: Vec<bool>,
    steps_taken: u64,
}

impl Integrator {
    pub fn new(config: SolverConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.grid;
        let modes = grid.half_modes();
        let h = config.dt_internal;
        let omega: Vec<f64> =
            modes.iter().map(|m| dispersion_symbol(config.equation, config.beta, m.norm())).collect();
        let cutoff = grid.points() as f64 / 3.0;
        let keep = modes
            .iter()
            .map(|m| !config.dealias || m.k.iter().all(|&k| (k.abs() as f64) <= cutoff))
            .collect();
        Ok(Integrator {
            config,
            plan: plan(&grid.shape()),
            half_step: omega.iter().map(|w| (w * h / 2.0).exp()).collect(),
            full_step: omega.iter().map(|w| (w * h).exp()).collect(),
            modes,
            keep,
            steps_taken: 0,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps_taken
    }

    /// `N(φ)` evaluated from the half spectrum `v` of `φ`, returned as a
    /// half spectrum.
    fn nonlinear_hat(&self, v: &[Complex64]) -> Vec<Complex64> {
        let grid = self.config.grid;
        let n = grid.len();
        let mut sq = vec![0.0; n];
        let mut work = vec![Complex64::new(0.0, 0.0); v.len()];
        let mut deriv = vec![0.0; n];
        for axis in 0..grid.dim() {
            for ((w, x), m) in work.iter_mut().zip(v).zip(&self.modes) {
                *w = if m.nyquist[axis] {
                    Complex64::new(0.0, 0.0)
                } else {
                    x * Complex64::new(0.0, m.k[axis] as f64)
                };
            }
            self.plan.inverse_in_place(&mut work, &mut deriv);
            for (s, d) in sq.iter_mut().zip(&deriv) {
                *s += d * d;
            }
        }
        let mut out = vec![Complex64::new(0.0, 0.0); v.len()];
        self.plan.forward(&sq, &mut out);
        let c = -self.config.nonlinear_coefficient();
        for (o, &k) in out.iter_mut().zip(&self.keep) {
            *o = if k { *o * c } else { Complex64::new(0.0, 0.0) };
        }
        out
    }

    /// One sub-step on a half spectrum.
    pub fn step_spectrum(&mut self, v: &mut [Complex64]) -> Result<()> {
        let h = self.config.dt_internal;
        let e = &self.half_step;
        let e2 = &self.full_step;
        let scaled = |x: Vec<Complex64>| -> Vec<Complex64> { x.into_iter().map(|c| c * h).collect() };

        let a = scaled(self.nonlinear_hat(v));
        let tmp: Vec<Complex64> = v.iter().zip(&a).zip(e).map(|((x, a), e)| (x + a * 0.5) * e).collect();
        let b = scaled(self.nonlinear_hat(&tmp));
        let ev: Vec<Complex64> = v.iter().zip(e).map(|(x, e)| x * e).collect();
        let tmp: Vec<Complex64> = ev.iter().zip(&b).map(|(x, b)| x + b * 0.5).collect();
        let c = scaled(self.nonlinear_hat(&tmp));
        let tmp: Vec<Complex64> =
            v.iter().zip(&c).zip(e.iter().zip(e2)).map(|((x, c), (e, e2))| x * e2 + c * e).collect();
        let d = scaled(self.nonlinear_hat(&tmp));
        for i in 0..v.len() {
            v[i] = v[i] * e2[i] + (a[i] * e2[i] + (b[i] + c[i]) * (2.0 * e[i]) + d[i]) / 6.0;
        }
        self.steps_taken += 1;
        if let Some(i) = v.iter().position(|x| !x.re.is_finite() || !x.im.is_finite()) {
            return Err(Error::Divergence(format!(
                "solver blew up at sub-step {} (non-finite mode {i})",
                self.steps_taken
            )));
        }
        Ok(())
    }

    /// Advances a single-channel field by `substeps` sub-steps.
    pub fn advance(&mut self, state: &Field, substeps: usize) -> Result<Field> {
        check_state(state, &self.config)?;
        let mut v = vec![Complex64::new(0.0, 0.0); self.config.grid.half_len()];
        self.plan.forward(state.values(), &mut v);
        for _ in 0..substeps {
            self.step_spectrum(&mut v)?;
        }
        let mut out = vec![0.0; self.config.grid.len()];
        self.plan.inverse_in_place(&mut v, &mut out);
        Field::new(self.config.grid, 1, out)
    }

    /// Advances by one output interval.
    pub fn advance_output(&mut self, state: &Field) -> Result<Field> {
        self.advance(state, self.config.substeps())
    }
}

fn check_state(state: &Field, config: &SolverConfig) -> Result<()> {
    if state.grid() != config.grid || state.channels() != 1 {
        return Err(Error::config("state does not match the solver grid"));
    }
    if !state.is_finite() {
        return Err(Error::Divergence("non-finite values in solver state at step 0".into()));
    }
    Ok(())
}

/// Nonlinear right-hand side `N(φ) = -c |∇φ|²` in physical space.
pub fn nonlinear_rhs(f: &Field, config: &SolverConfig) -> Result<Field> {
    check_state(f, config)?;
    let integ = Integrator::new(*config)?;
    let mut v = vec![Complex64::new(0.0, 0.0); config.grid.half_len()];
    integ.plan.forward(f.values(), &mut v);
    let mut n = integ.nonlinear_hat(&v);
    let mut out = vec![0.0; config.grid.len()];
    integ.plan.inverse_in_place(&mut n, &mut out);
    Ok(Field::from_raw(config.grid, 1, out))
}

/// Advances `state` by one solver sub-step `dt_internal`.
pub fn step(state: &Field, config: &SolverConfig) -> Result<Field> {
    Integrator::new(*config)?.advance(state, 1)
}

/// Mixes a master seed with a sequence index into an independent seed.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Simulates one sequence of `n_steps + 1` snapshots from `phi0`.
pub fn simulate(config: &SolverConfig, phi0: Field, n_steps: usize) -> Result<Vec<Field>> {
    let mut integ = Integrator::new(*config)?;
    let mut out = Vec::with_capacity(n_steps + 1);
    out.push(phi0);
    for _ in 0..n_steps {
        let next = integ.advance_output(out.last().unwrap())?;
        out.push(next);
    }
    Ok(out)
}

/// Generates `n_sequences` independent trajectories of `n_steps + 1`
/// snapshots each. Sequence `i` uses the seed `derive_seed(ic.seed, i)`, so
/// the result does not depend on scheduling.
pub fn generate_trajectories(
    config: &SolverConfig,
    ic: &InitialConditionSpec,
    n_sequences: usize,
    n_steps: usize,
) -> Result<TrajectoryDataset> {
    config.validate()?;
    ic.validate()?;
    let seeds: Vec<u64> = (0..n_sequences as u64).map(|i| derive_seed(ic.seed, i)).collect();
    let sequences: Vec<Vec<Field>> = seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let spec = InitialConditionSpec { seed, ..ic.clone() };
            let phi0 = sample_initial_condition(&spec, config.grid)?;
            simulate(config, phi0, n_steps)
                .map_err(|e| Error::Divergence(format!("sequence {i}: {e}")))
        })
        .collect::<Result<_>>()?;
    Ok(TrajectoryDataset {
        equation: config.equation,
        beta: config.beta,
        grid: config.grid,
        dt: config.output_interval,
        seed: ic.seed,
        sequences,
        solver: Some(*config),
        initial_condition: Some(ic.clone()),
        sequence_seeds: seeds,
    })
}
