use serde::{Deserialize, Serialize};

use super::{Builder, Ctx, Init};
use crate::autodiff::{Activation, ParamId, Var};
use crate::error::{Error, Result};
use crate::spectral::Grid;

fn default_kernel() -> usize {
    3
}
fn default_convs() -> usize {
    2
}

/// Periodic encoder/decoder on 1D grids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnConfig {
    /// Output channels of encoder level `l = 1..L`.
    pub channels: Vec<usize>,
    #[serde(default = "default_kernel")]
    pub kernel: usize,
    /// Steps per call; ignored (taken as 1) unless `koopman`.
    pub n: usize,
    /// Insert the per-level hidden map between encoder and decoder.
    pub koopman: bool,
    /// Replace the last convolution of a level with an Inception block.
    #[serde(default)]
    pub inception: Vec<bool>,
    /// Convolution blocks per encoder and decoder level.
    #[serde(default = "default_convs")]
    pub convs_per_level: usize,
    /// See [`FnoConfig::recentre`](super::FnoConfig::recentre).
    #[serde(default)]
    pub recentre: bool,
}

impl CnnConfig {
    pub fn new(channels: Vec<usize>, koopman: bool, n: usize) -> Self {
        CnnConfig { channels, kernel: 3, n, koopman, inception: Vec::new(), convs_per_level: 2, recentre: false }
    }

    pub fn levels(&self) -> usize {
        self.channels.len()
    }

    pub fn steps(&self) -> usize {
        if self.koopman {
            self.n
        } else {
            1
        }
    }

    fn inception_at(&self, level: usize) -> bool {
        self.inception.get(level).copied().unwrap_or(false)
    }

    pub fn validate(&self, grid: Grid) -> Result<()> {
        let l = self.levels();
        if grid.dim() != 1 {
            return Err(Error::config("convolutional models support 1D grids only"));
        }
        if l == 0 || self.channels.contains(&0) {
            return Err(Error::config("channel ladder must be non-empty and positive"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config(format!("kernel size {} must be odd", self.kernel)));
        }
        if grid.points() % (1 << (l - 1)) != 0 || grid.points() >> (l - 1) < 1 {
            return Err(Error::config(format!(
                "p = {} is not divisible by 2^(L-1) = {}",
                grid.points(),
                1usize << (l - 1)
            )));
        }
        if self.convs_per_level == 0 {
            return Err(Error::config("convs_per_level must be at least 1"));
        }
        if self.inception.len() > l {
            return Err(Error::config("more inception flags than levels"));
        }
        if self.koopman && self.n == 0 {
            return Err(Error::config("n must be at least 1"));
        }
        Ok(())
    }

    fn inception_split(c_out: usize) -> [(usize, usize); 3] {
        let base = c_out / 3;
        [(1, base), (3, c_out - 2 * base), (5, base)]
    }

    /// Closed-form parameter count.
    pub fn param_count(&self) -> usize {
        let k = self.kernel;
        let conv = |ci: usize, co: usize, k: usize| co * ci * k + co;
        let block = |ci: usize, co: usize| conv(ci, co, k) + 2 * co;
        let inception = |ci: usize, co: usize| {
            Self::inception_split(co).iter().filter(|(_, c)| *c > 0).map(|&(kk, c)| conv(ci, c, kk)).sum::<usize>() + 2 * co
        };
        let level = |l: usize, ci: usize, co: usize| {
            let mut total = block(ci, co);
            for j in 1..self.convs_per_level {
                let last = j + 1 == self.convs_per_level;
                total += if last && self.inception_at(l) { inception(co, co) } else { block(co, co) };
            }
            total
        };
        let ch = &self.channels;
        let mut total = 0;
        for l in 0..ch.len() {
            let ci = if l == 0 { 1 } else { ch[l - 1] };
            total += level(l, ci, ch[l]);
        }
        for l in (0..ch.len() - 1).rev() {
            total += level(usize::MAX, ch[l + 1] + ch[l], ch[l]);
        }
        total += conv(ch[0], 1, 1);
        if self.koopman {
            total += ch.iter().map(|&c| 2 * conv(c, c, k)).sum::<usize>();
        }
        total
    }
}

#[derive(Debug, Clone)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

impl Conv {
    fn build(b: &mut Builder, name: &str, ci: usize, co: usize, k: usize) -> Result<Self> {
        Ok(Conv {
            w: b.weight(format!("{name}.w"), vec![co, ci, k], ci * k)?,
            b: b.weight(format!("{name}.b"), vec![co], ci * k)?,
        })
    }

    fn apply(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let (w, b) = (ctx.p(self.w), ctx.p(self.b));
        ctx.tape.conv_periodic(x, w, b)
    }
}

/// Convolution(s) followed by ReLU and layer norm.
#[derive(Debug, Clone)]
struct Block {
    convs: Vec<Conv>,
    g: ParamId,
    beta: ParamId,
}

impl Block {
    fn plain(b: &mut Builder, name: &str, ci: usize, co: usize, k: usize) -> Result<Self> {
        let convs = vec![Conv::build(b, &format!("{name}.conv"), ci, co, k)?];
        Self::finish(b, name, convs, co)
    }

    fn inception(b: &mut Builder, name: &str, ci: usize, co: usize) -> Result<Self> {
        let mut convs = Vec::new();
        for (kk, c) in CnnConfig::inception_split(co) {
            if c > 0 {
                convs.push(Conv::build(b, &format!("{name}.k{kk}"), ci, c, kk)?);
            }
        }
        Self::finish(b, name, convs, co)
    }

    fn finish(b: &mut Builder, name: &str, convs: Vec<Conv>, co: usize) -> Result<Self> {
        let g = b.add(format!("{name}.ln_g"), vec![co], Init::Const(1.0))?;
        let beta = b.add(format!("{name}.ln_b"), vec![co], Init::Const(0.0))?;
        Ok(Block { convs, g, beta })
    }

    fn apply(&self, ctx: &mut Ctx, x: Var) -> Result<Var> {
        let parts = self.convs.iter().map(|c| c.apply(ctx, x)).collect::<Result<Vec<_>>>()?;
        let y = if parts.len() == 1 { parts[0] } else { ctx.tape.concat_channels(&parts)? };
        let y = ctx.tape.activation(y, Activation::Relu)?;
        let (g, b) = (ctx.p(self.g), ctx.p(self.beta));
        ctx.tape.layer_norm(y, g, b)
    }
}

/// `e ↦ e + conv_b(ReLU(conv_a(e)))` at one level.
#[derive(Debug, Clone)]
struct Advance {
    a: Conv,
    b: Conv,
}

#[derive(Debug, Clone)]
pub(crate) struct CnnNet {
    n: usize,
    encoder: Vec<Vec<Block>>,
    decoder: Vec<Vec<Block>>,
    head: Conv,
    advance: Option<Vec<Advance>>,
}

impl CnnNet {
    pub(crate) fn build(c: &CnnConfig, grid: Grid, b: &mut Builder) -> Result<Self> {
        c.validate(grid)?;
        let k = c.kernel;
        let ch = &c.channels;
        let level = |b: &mut Builder, name: &str, ci: usize, co: usize, incep: bool| -> Result<Vec<Block>> {
            let mut blocks = vec![Block::plain(b, &format!("{name}.0"), ci, co, k)?];
            for j in 1..c.convs_per_level {
                let nm = format!("{name}.{j}");
                blocks.push(if incep && j + 1 == c.convs_per_level {
                    Block::inception(b, &nm, co, co)?
                } else {
                    Block::plain(b, &nm, co, co, k)?
                });
            }
            Ok(blocks)
        };
        let mut encoder = Vec::new();
        for l in 0..ch.len() {
            let ci = if l == 0 { 1 } else { ch[l - 1] };
            encoder.push(level(b, &format!("enc{}", l + 1), ci, ch[l], c.inception_at(l))?);
        }
        let mut decoder = Vec::new();
        for l in (0..ch.len() - 1).rev() {
            decoder.push(level(b, &format!("dec{}", l + 1), ch[l + 1] + ch[l], ch[l], false)?);
        }
        let head = Conv::build(b, "head", ch[0], 1, 1)?;
        let advance = if c.koopman {
            let mut a = Vec::new();
            for (l, &cl) in ch.iter().enumerate() {
                a.push(Advance {
                    a: Conv::build(b, &format!("adv{}.a", l + 1), cl, cl, k)?,
                    b: Conv::build(b, &format!("adv{}.b", l + 1), cl, cl, k)?,
                });
            }
            Some(a)
        } else {
            None
        };
        Ok(CnnNet { n: c.steps(), encoder, decoder, head, advance })
    }

    fn encode(&self, ctx: &mut Ctx, input: Var) -> Result<Vec<Var>> {
        let mut levels = Vec::with_capacity(self.encoder.len());
        let mut e = input;
        for (l, blocks) in self.encoder.iter().enumerate() {
            if l > 0 {
                e = ctx.tape.maxpool2(e)?;
            }
            for blk in blocks {
                e = blk.apply(ctx, e)?;
            }
            levels.push(e);
        }
        Ok(levels)
    }

    fn decode(&self, ctx: &mut Ctx, levels: &[Var]) -> Result<Var> {
        let top = levels.len() - 1;
        let mut d = levels[top];
        for (j, blocks) in self.decoder.iter().enumerate() {
            let l = top - 1 - j;
            let up = ctx.tape.upsample2(d)?;
            d = ctx.tape.concat_channels(&[up, levels[l]])?;
            for blk in blocks {
                d = blk.apply(ctx, d)?;
            }
        }
        self.head.apply(ctx, d)
    }

    pub(crate) fn forward(&self, ctx: &mut Ctx, input: Var) -> Result<Vec<Var>> {
        let mut levels = self.encode(ctx, input)?;
        let Some(adv) = &self.advance else {
            return Ok(vec![self.decode(ctx, &levels)?]);
        };
        let mut outs = Vec::with_capacity(self.n);
        for _ in 0..self.n {
            for (e, a) in levels.iter_mut().zip(adv) {
                let h = a.a.apply(ctx, *e)?;
                let h = ctx.tape.activation(h, Activation::Relu)?;
                let h = a.b.apply(ctx, h)?;
                *e = ctx.tape.add(*e, h)?;
            }
            outs.push(self.decode(ctx, &levels)?);
        }
        Ok(outs)
    }
}
