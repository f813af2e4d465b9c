//! Neural time-advancement operators: Fourier-layer models (FNO, kFNO and
//! its variants) and convolutional encoder/decoder models (CNN, kCNN).
//!
//! Every model is a pure function of a [`ParamVector`] and an input field.
//! Forward passes are recorded on a [`Tape`] so the same code path serves
//! inference and training.

mod checkpoint;
mod cnn;
mod fno;

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamVector, Registry, Tape, Var};
use crate::error::{Error, Result};
use crate::spectral::{signed_wavenumber, Field, Grid};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use cnn::CnnConfig;
pub use fno::{FnoConfig, FnoVariant};

/// Architecture selector with its settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ModelConfig {
    Fno(FnoConfig),
    Cnn(CnnConfig),
}

impl ModelConfig {
    /// Short name: fno, kfno, kfno_star, kfno_dagger, cnn or kcnn.
    pub fn kind(&self) -> &'static str {
        match self {
            ModelConfig::Fno(c) => c.variant.kind(),
            ModelConfig::Cnn(c) if c.koopman => "kcnn",
            ModelConfig::Cnn(_) => "cnn",
        }
    }

    /// Steps emitted per call.
    pub fn n(&self) -> usize {
        match self {
            ModelConfig::Fno(c) => c.steps(),
            ModelConfig::Cnn(c) => c.steps(),
        }
    }

    pub fn recentre(&self) -> bool {
        match self {
            ModelConfig::Fno(c) => c.recentre,
            ModelConfig::Cnn(c) => c.recentre,
        }
    }
}

/// How a parameter block is drawn at initialization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Uniform(f64),
    Const(f64),
}

/// Registry under construction plus the init rule of each block.
#[derive(Debug, Default)]
pub(crate) struct Builder {
    pub registry: Registry,
    pub init: Vec<Init>,
}

impl Builder {
    pub fn add(&mut self, name: String, dims: Vec<usize>, init: Init) -> Result<ParamId> {
        let id = self.registry.add(name, dims)?;
        self.init.push(init);
        Ok(id)
    }

    /// Weight with `fan_in` inputs: uniform in ±1/√fan_in.
    pub fn weight(&mut self, name: String, dims: Vec<usize>, fan_in: usize) -> Result<ParamId> {
        self.add(name, dims, Init::Uniform(1.0 / (fan_in as f64).sqrt()))
    }
}

/// Per-tape cache so each parameter block enters the tape once.
pub(crate) struct Ctx<'a> {
    pub tape: &'a mut Tape,
    pub params: &'a ParamVector,
    leaves: HashMap<ParamId, Var>,
}

impl<'a> Ctx<'a> {
    pub fn new(tape: &'a mut Tape, params: &'a ParamVector) -> Self {
        Ctx { tape, params, leaves: HashMap::new() }
    }

    pub fn p(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.leaves.get(&id) {
            return v;
        }
        let v = self.tape.param(self.params, id);
        self.leaves.insert(id, v);
        v
    }
}

/// A configured architecture bound to a grid.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    grid: Grid,
    registry: Registry,
    init: Vec<Init>,
    net: Net,
}

#[derive(Debug, Clone)]
enum Net {
    Fno(fno::FnoNet),
    Cnn(cnn::CnnNet),
}

impl Model {
    pub fn new(config: ModelConfig, grid: Grid) -> Result<Self> {
        let mut b = Builder::default();
        let net = match &config {
            ModelConfig::Fno(c) => Net::Fno(fno::FnoNet::build(c, grid, &mut b)?),
            ModelConfig::Cnn(c) => Net::Cnn(cnn::CnnNet::build(c, grid, &mut b)?),
        };
        Ok(Model { config, grid, registry: b.registry, init: b.init, net })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    pub fn n_params(&self) -> usize {
        self.registry.total()
    }

    /// Steps emitted per call.
    pub fn n(&self) -> usize {
        self.config.n()
    }

    /// Seeded initial parameters.
    pub fn init_params(&self, seed: u64) -> ParamVector {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamVector::zeros(self.registry.clone());
        for (i, init) in self.init.iter().enumerate() {
            let block = p.block_mut(ParamId(i));
            match *init {
                Init::Uniform(a) => block.iter_mut().for_each(|v| *v = rng.gen_range(-a..=a)),
                Init::Const(c) => block.iter_mut().for_each(|v| *v = c),
            }
        }
        p
    }

    fn check_params(&self, params: &ParamVector) -> Result<()> {
        if params.registry() != &self.registry {
            return Err(Error::config("parameter layout does not match the model"));
        }
        Ok(())
    }

    /// Records the forward pass for a `[1, p, ..]` input node and returns
    /// the `n` predicted step nodes.
    pub fn forward(&self, tape: &mut Tape, params: &ParamVector, input: Var) -> Result<Vec<Var>> {
        self.check_params(params)?;
        let mut want = vec![1];
        want.extend(self.grid.shape());
        if tape.dims(input) != want {
            return Err(Error::config(format!(
                "input dims {:?} do not match model grid {:?}",
                tape.dims(input),
                want
            )));
        }
        if !self.config.recentre() {
            let mut ctx = Ctx::new(tape, params);
            return self.net_forward(&mut ctx, input);
        }
        let mean = spatial_mean(tape, input)?;
        let neg = tape.scale(mean, -1.0)?;
        let centred = tape.add(input, neg)?;
        let outs = self.net_forward(&mut Ctx::new(tape, params), centred)?;
        outs.into_iter().map(|o| tape.add(o, mean)).collect()
    }

    fn net_forward(&self, ctx: &mut Ctx, input: Var) -> Result<Vec<Var>> {
        match &self.net {
            Net::Fno(net) => net.forward(ctx, input),
            Net::Cnn(net) => net.forward(ctx, input),
        }
    }

    /// Predicts the next `n` snapshots of `phi`.
    pub fn predict(&self, params: &ParamVector, phi: &Field) -> Result<Vec<Field>> {
        if phi.grid() != self.grid || phi.channels() != 1 {
            return Err(Error::config(format!(
                "input field on {:?} with {} channels does not match model grid {:?}",
                phi.grid(),
                phi.channels(),
                self.grid
            )));
        }
        let mut tape = Tape::new();
        let x = tape.field(phi);
        let outs = self.forward(&mut tape, params, x)?;
        outs.into_iter().map(|v| tape.to_field(v, self.grid)).collect()
    }
}

/// Spatial mean of every channel, broadcast back over the grid: the DC bin
/// passed through unchanged, everything else dropped.
fn spatial_mean(tape: &mut Tape, x: Var) -> Result<Var> {
    let c = tape.dims(x)[0];
    let mut eye = vec![0.0; c * c * 2];
    for i in 0..c {
        eye[(i * c + i) * 2] = 1.0;
    }
    let r = tape.constant(vec![1, c, c, 2], eye)?;
    let s = tape.rfft(x)?;
    let dc: Arc<[usize]> = Arc::from(vec![0usize]);
    let s = tape.spectral_mul(s, r, &dc)?;
    tape.irfft(s)
}

/// Half-spectrum bins of an array with real-domain `dims` retained by a
/// per-axis cutoff: `|κ_j| < cutoff[j]`, where `None` keeps the whole axis.
pub fn retained_modes(dims: &[usize], cutoff: &[Option<usize>]) -> Vec<usize> {
    let d = dims.len();
    let mut half = dims.to_vec();
    half[d - 1] = dims[d - 1] / 2 + 1;
    let total: usize = half.iter().product();
    let keep = |axis: usize, idx: usize| -> bool {
        let Some(c) = cutoff[axis] else { return true };
        let k = if axis == d - 1 { idx as i64 } else { signed_wavenumber(idx, dims[axis]) };
        (k.unsigned_abs() as usize) < c
    };
    (0..total)
        .filter(|&flat| {
            let mut rem = flat;
            (0..d).rev().all(|axis| {
                let idx = rem % half[axis];
                rem /= half[axis];
                keep(axis, idx)
            })
        })
        .collect()
}

/// Periodic coordinate channels `(sin x, cos x[, sin y, cos y])` on `grid`.
pub fn coordinate_channels(grid: Grid) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * grid.dim() * grid.len());
    for axis in 0..grid.dim() {
        for f in [f64::sin, f64::cos] {
            out.extend(Field::from_fn(grid, |x| f(x[axis])).into_values());
        }
    }
    out
}
