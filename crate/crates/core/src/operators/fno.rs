use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{coordinate_channels, retained_modes, Builder, Ctx, Init};
use crate::autodiff::{Activation, ParamId, Var};
use crate::error::{Error, Result};
use crate::spectral::Grid;

/// Fourier-family architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FnoVariant {
    /// Single-step FNO with the rollout and per-step maps merged into the
    /// hidden stack.
    Baseline,
    /// kFNO: two-layer nonlinear advancement operator.
    Default,
    /// kFNO*: one linear Fourier layer as the advancement operator.
    Star,
    /// kFNO†: per-step map as one Fourier layer over (step, space).
    Dagger,
}

impl FnoVariant {
    pub fn kind(self) -> &'static str {
        match self {
            FnoVariant::Baseline => "fno",
            FnoVariant::Default => "kfno",
            FnoVariant::Star => "kfno_star",
            FnoVariant::Dagger => "kfno_dagger",
        }
    }

    /// Fourier layers in the advancement operator.
    pub fn a_layers(self) -> usize {
        match self {
            FnoVariant::Star => 1,
            _ => 2,
        }
    }
}

fn default_h_layers() -> usize {
    3
}
fn default_alpha() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnoConfig {
    pub d_z: usize,
    /// Retained modes per spatial axis: `|κ_j| < kappa_max`.
    pub kappa_max: usize,
    #[serde(default = "default_h_layers")]
    pub n_layers_h: usize,
    /// Skip weight of every Fourier layer, 0 or 1.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Steps per call; ignored (taken as 1) for the baseline.
    pub n: usize,
    pub variant: FnoVariant,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// One parameter block for all layers of the hidden stack.
    #[serde(default)]
    pub share_h: bool,
    /// One per-step layer shared across the `n` steps (default variant).
    #[serde(default = "default_true")]
    pub share_qbar: bool,
    /// Feed `(sin x, cos x, ..)` to the lifting map in addition to the field.
    #[serde(default)]
    pub coord_channels: bool,
    /// Work on the input minus its spatial mean and add the mean back to
    /// every output.
    #[serde(default)]
    pub recentre: bool,
}

fn default_activation() -> Activation {
    Activation::Gelu
}

impl FnoConfig {
    pub fn new(variant: FnoVariant, d_z: usize, kappa_max: usize, n: usize) -> Self {
        FnoConfig {
            d_z,
            kappa_max,
            n_layers_h: 3,
            alpha: 1.0,
            n,
            variant,
            activation: Activation::Gelu,
            share_h: false,
            share_qbar: true,
            coord_channels: false,
            recentre: false,
        }
    }

    pub fn steps(&self) -> usize {
        match self.variant {
            FnoVariant::Baseline => 1,
            _ => self.n,
        }
    }

    /// Layers in the single-step stack of the baseline, matching the
    /// capacity of the hidden stack, the advancement operator and the
    /// per-step map of the default kFNO.
    pub fn baseline_layers(&self) -> usize {
        self.n_layers_h + FnoVariant::Default.a_layers() + 1
    }

    pub fn validate(&self, grid: Grid) -> Result<()> {
        if self.d_z == 0 {
            return Err(Error::config("d_z must be positive"));
        }
        if self.kappa_max == 0 || self.kappa_max > grid.points() / 2 {
            return Err(Error::config(format!(
                "kappa_max {} must lie in [1, {}]",
                self.kappa_max,
                grid.points() / 2
            )));
        }
        if self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        if self.alpha != 0.0 && self.alpha != 1.0 {
            return Err(Error::config(format!("alpha must be 0 or 1, got {}", self.alpha)));
        }
        Ok(())
    }

    fn input_channels(&self, grid: Grid) -> usize {
        1 + if self.coord_channels { 2 * grid.dim() } else { 0 }
    }

    /// Closed-form parameter count.
    pub fn param_count(&self, grid: Grid) -> usize {
        let dz = self.d_z;
        let k = self.kappa_max;
        let modes = if grid.dim() == 1 { k } else { (2 * k - 1) * k };
        let layer = |m: usize| dz * dz + dz + 2 * m * dz * dz;
        let lift = self.input_channels(grid) * dz + dz + dz * dz + dz;
        let project = dz * 4 * dz + 4 * dz + 4 * dz + 1;
        let blocks = |count: usize| if self.share_h { count.min(1) } else { count };
        let core = match self.variant {
            FnoVariant::Baseline => blocks(self.baseline_layers()) * layer(modes),
            v => {
                let hidden = blocks(self.n_layers_h) * layer(modes);
                let a = v.a_layers() * layer(modes);
                let q = match v {
                    FnoVariant::Dagger => {
                        let step_modes = if grid.dim() == 1 { 2 * self.n * k } else { 2 * self.n * (2 * k - 1) * k };
                        layer(step_modes)
                    }
                    _ if self.share_qbar => layer(modes),
                    _ => self.n * layer(modes),
                };
                hidden + a + q
            }
        };
        lift + core + project
    }
}

/// Parameter ids of one Fourier layer.
#[derive(Debug, Clone)]
pub(crate) struct FourierLayer {
    w: ParamId,
    b: ParamId,
    r: ParamId,
    modes: Arc<[usize]>,
    /// Final activation; `None` for linear layers.
    act: Option<Activation>,
    alpha: f64,
}

impl FourierLayer {
    fn build(
        b: &mut Builder,
        name: &str,
        d_z: usize,
        modes: Arc<[usize]>,
        act: Option<Activation>,
        alpha: f64,
    ) -> Result<Self> {
        let w = b.weight(format!("{name}.w"), vec![d_z, d_z], d_z)?;
        let bias = b.weight(format!("{name}.b"), vec![d_z], d_z)?;
        let r = b.add(format!("{name}.r"), vec![modes.len(), d_z, d_z, 2], Init::Uniform(1.0 / d_z as f64))?;
        Ok(FourierLayer { w, b: bias, r, modes, act, alpha })
    }

    /// `z ↦ α z + σ(W z + b + F⁻¹(R · F z))`.
    pub(crate) fn apply(&self, ctx: &mut Ctx, z: Var) -> Result<Var> {
        let (w, b, r) = (ctx.p(self.w), ctx.p(self.b), ctx.p(self.r));
        let t = &mut *ctx.tape;
        let local = t.channel_mix(z, w, Some(b))?;
        let zf = t.rfft(z)?;
        let mixed = t.spectral_mul(zf, r, &self.modes)?;
        let spec = t.irfft(mixed)?;
        let mut y = t.add(local, spec)?;
        if let Some(a) = self.act {
            y = t.activation(y, a)?;
        }
        if self.alpha != 0.0 {
            y = t.add(y, z)?;
        }
        Ok(y)
    }
}

/// Pointwise two-layer map `W₂ σ(W₁ x + b₁) + b₂`.
#[derive(Debug, Clone)]
pub(crate) struct Pointwise {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    act: Activation,
}

impl Pointwise {
    fn build(b: &mut Builder, name: &str, c_in: usize, hidden: usize, c_out: usize, act: Activation) -> Result<Self> {
        Ok(Pointwise {
            w1: b.weight(format!("{name}.w1"), vec![hidden, c_in], c_in)?,
            b1: b.weight(format!("{name}.b1"), vec![hidden], c_in)?,
            w2: b.weight(format!("{name}.w2"), vec![c_out, hidden], hidden)?,
            b2: b.weight(format!("{name}.b2"), vec![c_out], hidden)?,
            act,
        })
    }

    fn apply(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w1, b1, w2, b2) = (ctx.p(self.w1), ctx.p(self.b1), ctx.p(self.w2), ctx.p(self.b2));
        let t = &mut *ctx.tape;
        let h = t.channel_mix(x, w1, Some(b1))?;
        let h = t.activation(h, self.act)?;
        t.channel_mix(h, w2, Some(b2))
    }
}

#[derive(Debug, Clone)]
enum PerStep {
    Shared(FourierLayer),
    Separate(Vec<FourierLayer>),
    /// Layer over `[d_z, 2n, space..]`.
    Dagger(FourierLayer),
}

#[derive(Debug, Clone)]
pub(crate) struct FnoNet {
    grid: Grid,
    n: usize,
    coords: Option<Vec<f64>>,
    lift: Pointwise,
    hidden: Vec<FourierLayer>,
    advance: Vec<FourierLayer>,
    per_step: Option<PerStep>,
    project: Pointwise,
}

impl FnoNet {
    pub(crate) fn build(c: &FnoConfig, grid: Grid, b: &mut Builder) -> Result<Self> {
        c.validate(grid)?;
        let dz = c.d_z;
        let space = grid.shape();
        let cut = vec![Some(c.kappa_max); grid.dim()];
        let modes: Arc<[usize]> = retained_modes(&space, &cut).into();
        let act = Some(c.activation);
        let lift = Pointwise::build(b, "lift", c.input_channels(grid), dz, dz, c.activation)?;

        let stack = |b: &mut Builder, prefix: &str, count: usize, shared: bool, act: Option<Activation>| {
            let mut layers: Vec<FourierLayer> = Vec::with_capacity(count);
            for i in 0..count {
                if shared && i > 0 {
                    let first: FourierLayer = layers[0].clone();
                    layers.push(first);
                } else {
                    layers.push(FourierLayer::build(b, &format!("{prefix}.{i}"), dz, modes.clone(), act, c.alpha)?);
                }
            }
            Ok::<_, Error>(layers)
        };

        let (hidden, advance, per_step) = match c.variant {
            FnoVariant::Baseline => (stack(b, "h", c.baseline_layers(), c.share_h, act)?, Vec::new(), None),
            v => {
                let hidden = stack(b, "h", c.n_layers_h, c.share_h, act)?;
                let a_act = if v == FnoVariant::Star { None } else { act };
                let advance = stack(b, "a", v.a_layers(), false, a_act)?;
                let per_step = match v {
                    FnoVariant::Dagger => {
                        let mut dims = vec![2 * c.n];
                        dims.extend(&space);
                        let mut cut = vec![None];
                        cut.extend(vec![Some(c.kappa_max); grid.dim()]);
                        let m: Arc<[usize]> = retained_modes(&dims, &cut).into();
                        PerStep::Dagger(FourierLayer::build(b, "q", dz, m, act, c.alpha)?)
                    }
                    _ if c.share_qbar => PerStep::Shared(stack(b, "q", 1, false, act)?.remove(0)),
                    _ => PerStep::Separate(stack(b, "q", c.n, false, act)?),
                };
                (hidden, advance, Some(per_step))
            }
        };
        let project = Pointwise::build(b, "proj", dz, 4 * dz, 1, c.activation)?;
        let coords = c.coord_channels.then(|| coordinate_channels(grid));
        Ok(FnoNet { grid, n: c.steps(), coords, lift, hidden, advance, per_step, project })
    }

    /// `(A z, A² z, .., Aⁿ z)`.
    pub(crate) fn advance(&self, ctx: &mut Ctx, mut z: Var, n: usize) -> Result<Vec<Var>> {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            for layer in &self.advance {
                z = layer.apply(ctx, z)?;
            }
            out.push(z);
        }
        Ok(out)
    }

    pub(crate) fn forward(&self, ctx: &mut Ctx, input: Var) -> Result<Vec<Var>> {
        let mut x = input;
        if let Some(coords) = &self.coords {
            let mut dims = vec![2 * self.grid.dim()];
            dims.extend(self.grid.shape());
            let c = ctx.tape.constant(dims, coords.clone())?;
            x = ctx.tape.concat_channels(&[input, c])?;
        }
        let mut z = self.lift.apply(ctx, x)?;
        for layer in &self.hidden {
            z = layer.apply(ctx, z)?;
        }
        let Some(per_step) = &self.per_step else {
            return Ok(vec![self.project.apply(ctx, z)?]);
        };

        let rolled = self.advance(ctx, z, self.n)?;
        let stepped = match per_step {
            PerStep::Shared(q) => rolled.iter().map(|&z| q.apply(ctx, z)).collect::<Result<Vec<_>>>()?,
            PerStep::Separate(qs) => rolled.iter().zip(qs).map(|(&z, q)| q.apply(ctx, z)).collect::<Result<Vec<_>>>()?,
            PerStep::Dagger(q) => {
                let t = &mut *ctx.tape;
                let s = t.stack(&rolled)?;
                let s = t.pad_axis(s, 2 * self.n)?;
                let s = q.apply(ctx, s)?;
                let s = ctx.tape.crop_axis(s, self.n)?;
                (0..self.n).map(|i| ctx.tape.select(s, i)).collect::<Result<Vec<_>>>()?
            }
        };
        stepped.into_iter().map(|z| self.project.apply(ctx, z)).collect()
    }
}
