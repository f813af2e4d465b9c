//! Reverse-mode differentiation over the fixed primitive set used by the
//! neural operators.
//!
//! A [`Tape`] records every primitive in execution order, so node inputs
//! always precede the node and one reverse sweep visits each node once.
//! Tensors are channel-major: `[channels, spatial...]`. Complex tensors
//! (spectra) keep the real-domain dims and store the half spectrum of the
//! last axis.
//!
//! Parameters enter the tape through [`Tape::param`]; their adjoints are
//! scattered into a flat gradient aligned with the [`ParamVector`].
//! Complex parameter blocks are interleaved `(re, im)` pairs.

mod check;
pub mod kernels;
mod params;

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::spectral::{plan, Field, Grid};
use kernels::*;

pub use check::{gradient_check, GradCheckReport};
pub use params::{ParamEntry, ParamId, ParamVector, Registry};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// tanh approximation.
    Gelu,
    /// Subgradient 0 at the kink.
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu(x),
            Activation::Relu => x.max(0.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => gelu_grad(x),
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Value {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Value {
    fn zeros_like(&self) -> Value {
        match self {
            Value::Real(v) => Value::Real(vec![0.0; v.len()]),
            Value::Complex(v) => Value::Complex(vec![Complex64::new(0.0, 0.0); v.len()]),
        }
    }
}

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param { offset: usize },
    ComplexParam { offset: usize },
    Add(Var, Var),
    Sum(Vec<Var>),
    Scale(Var, f64),
    ChannelMix { x: Var, w: Var, b: Option<Var> },
    /// `slope` holds σ'(x) for GELU nodes that need gradients.
    Act { x: Var, kind: Activation, slope: Vec<f64> },
    Rfft(Var),
    Irfft(Var),
    SpectralMul { x: Var, r: Var, modes: Arc<[usize]> },
    Conv { x: Var, w: Var, b: Var, kernel: usize },
    MaxPool2 { x: Var, argmax: Vec<u32> },
    Upsample2(Var),
    Concat(Vec<Var>),
    LayerNorm { x: Var, g: Var, b: Var, xhat: Vec<f64>, inv_std: f64 },
    RelL2 { pred: Var, target: Var, diff_norm: f64, target_norm: f64 },
    SquaredNorm(Var),
    Stack(Vec<Var>),
    Select { x: Var, index: usize },
    PadAxis { x: Var, from: usize },
    CropAxis { x: Var },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    dims: Vec<usize>,
    value: Value,
    needs_grad: bool,
}

/// Recorded computation graph.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn spatial_len(dims: &[usize]) -> usize {
    dims[1..].iter().product()
}

fn half_len(dims: &[usize]) -> usize {
    let s = &dims[1..];
    let last = s[s.len() - 1];
    s[..s.len() - 1].iter().product::<usize>() * (last / 2 + 1)
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, dims: Vec<usize>, value: Value, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, dims, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn real(&self, v: Var) -> Result<&[f64]> {
        match &self.node(v).value {
            Value::Real(x) => Ok(x),
            Value::Complex(_) => Err(Error::graph(format!("node {} is complex, expected real", v.0))),
        }
    }

    fn complex(&self, v: Var) -> Result<&[Complex64]> {
        match &self.node(v).value {
            Value::Complex(x) => Ok(x),
            Value::Real(_) => Err(Error::graph(format!("node {} is real, expected complex", v.0))),
        }
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        &self.node(v).dims
    }

    /// Real values of a node. Panics on complex nodes.
    pub fn value(&self, v: Var) -> &[f64] {
        self.real(v).expect("value() called on a complex node")
    }

    /// Complex values of a node. Panics on real nodes.
    pub fn complex_value(&self, v: Var) -> &[Complex64] {
        self.complex(v).expect("complex_value() called on a real node")
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    /// Reads a `[c, p, ..]` node back as a field on `grid`.
    pub fn to_field(&self, v: Var, grid: Grid) -> Result<Field> {
        let dims = self.dims(v);
        if dims.len() != grid.dim() + 1 || dims[1..].iter().any(|&p| p != grid.points()) {
            return Err(Error::graph(format!("node {} with dims {dims:?} is not a field on {grid:?}", v.0)));
        }
        Field::new(grid, dims[0], self.value(v).to_vec())
    }

    fn expect_same_dims(&self, a: Var, b: Var) -> Result<()> {
        if self.dims(a) != self.dims(b) {
            return Err(Error::graph(format!(
                "shape mismatch between node {} {:?} and node {} {:?}",
                a.0,
                self.dims(a),
                b.0,
                self.dims(b)
            )));
        }
        Ok(())
    }

    // ----- leaves -----

    /// Non-differentiable input.
    pub fn constant(&mut self, dims: Vec<usize>, data: Vec<f64>) -> Result<Var> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::graph(format!("constant dims {dims:?} do not match {} values", data.len())));
        }
        Ok(self.push(Op::Constant, dims, Value::Real(data), false))
    }

    /// Field as a `[c, p, ..]` constant.
    pub fn field(&mut self, f: &Field) -> Var {
        let mut dims = vec![f.channels()];
        dims.extend(f.grid().shape());
        self.push(Op::Constant, dims, Value::Real(f.values().to_vec()), false)
    }

    /// Parameter block as a differentiable leaf.
    pub fn param(&mut self, params: &ParamVector, id: ParamId) -> Var {
        let e = params.registry().get(id);
        self.push(
            Op::Param { offset: e.offset },
            e.dims.clone(),
            Value::Real(params.block(id).to_vec()),
            true,
        )
    }

    /// Parameter block read as interleaved `(re, im)` pairs forming a
    /// complex tensor of real-domain `dims` (half spectrum on the last axis).
    pub fn param_complex(&mut self, params: &ParamVector, id: ParamId, dims: Vec<usize>) -> Result<Var> {
        let e = params.registry().get(id);
        if dims.len() < 2 || 2 * dims[0] * half_len(&dims) != e.len() {
            return Err(Error::graph(format!("complex parameter {} cannot be viewed with dims {dims:?}", e.name)));
        }
        let v = params.block(id).chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
        Ok(self.push(Op::ComplexParam { offset: e.offset }, dims, Value::Complex(v), true))
    }

    // ----- arithmetic -----

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.expect_same_dims(a, b)?;
        let v = match (&self.node(a).value, &self.node(b).value) {
            (Value::Real(x), Value::Real(y)) => Value::Real(x.iter().zip(y).map(|(p, q)| p + q).collect()),
            (Value::Complex(x), Value::Complex(y)) => {
                Value::Complex(x.iter().zip(y).map(|(p, q)| p + q).collect())
            }
            _ => return Err(Error::graph(format!("cannot add real and complex nodes {} and {}", a.0, b.0))),
        };
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), self.dims(a).to_vec(), v, ng))
    }

    /// Sum of equally shaped real tensors.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::graph("sum of zero nodes"))?;
        let mut acc = self.real(first)?.to_vec();
        for &p in &parts[1..] {
            self.expect_same_dims(first, p)?;
            axpy(&mut acc, self.real(p)?, 1.0);
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::Sum(parts.to_vec()), self.dims(first).to_vec(), Value::Real(acc), ng))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let v = match &self.node(a).value {
            Value::Real(x) => Value::Real(x.iter().map(|p| p * s).collect()),
            Value::Complex(x) => Value::Complex(x.iter().map(|p| p * s).collect()),
        };
        let ng = self.ng(a);
        Ok(self.push(Op::Scale(a, s), self.dims(a).to_vec(), v, ng))
    }

    /// Pointwise affine channel map `y[o] = Σ_i W[o, i] x[i] + b[o]`.
    pub fn channel_mix(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        let wd = self.dims(w).to_vec();
        if xd.len() < 2 || wd.len() != 2 || wd[1] != xd[0] {
            return Err(Error::graph(format!(
                "channel_mix: input node {} {:?} incompatible with weight node {} {:?}",
                x.0, xd, w.0, wd
            )));
        }
        let (c_out, c_in) = (wd[0], wd[1]);
        if let Some(b) = b {
            if self.dims(b) != [c_out] {
                return Err(Error::graph(format!(
                    "channel_mix: bias node {} {:?} does not match weight node {} {:?}",
                    b.0,
                    self.dims(b),
                    w.0,
                    wd
                )));
            }
        }
        let n = spatial_len(&xd);
        let y = channel_mix(self.real(x)?, self.real(w)?, b.map(|b| self.value(b)), c_in, c_out, n);
        let mut dims = xd;
        dims[0] = c_out;
        let ng = self.ng(x) || self.ng(w) || b.is_some_and(|b| self.ng(b));
        Ok(self.push(Op::ChannelMix { x, w, b }, dims, Value::Real(y), ng))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var> {
        let ng = self.ng(x);
        let xs = self.real(x)?;
        let (y, slope) = if ng && kind == Activation::Gelu {
            xs.iter().map(|&v| gelu_with_grad(v)).unzip()
        } else {
            (xs.iter().map(|&v| kind.apply(v)).collect(), Vec::new())
        };
        Ok(self.push(Op::Act { x, kind, slope }, self.dims(x).to_vec(), Value::Real(y), ng))
    }

    // ----- spectral -----

    /// Forward real transform over all spatial axes, per channel.
    pub fn rfft(&mut self, x: Var) -> Result<Var> {
        let dims = self.dims(x).to_vec();
        if dims.len() < 2 || dims[dims.len() - 1] % 2 != 0 {
            return Err(Error::graph(format!("rfft: node {} has unsupported dims {dims:?}", x.0)));
        }
        let p = plan(&dims[1..]);
        let (n, h) = (p.real_len(), p.complex_len());
        let xs = self.real(x)?;
        let mut out = vec![Complex64::new(0.0, 0.0); dims[0] * h];
        for (src, dst) in xs.chunks_exact(n).zip(out.chunks_exact_mut(h)) {
            p.forward(src, dst);
        }
        let ng = self.ng(x);
        Ok(self.push(Op::Rfft(x), dims, Value::Complex(out), ng))
    }

    /// Normalized inverse of [`rfft`](Self::rfft).
    pub fn irfft(&mut self, x: Var) -> Result<Var> {
        let dims = self.dims(x).to_vec();
        let p = plan(&dims[1..]);
        let (n, h) = (p.real_len(), p.complex_len());
        let xs = self.complex(x)?;
        let mut out = vec![0.0; dims[0] * n];
        for (src, dst) in xs.chunks_exact(h).zip(out.chunks_exact_mut(n)) {
            p.inverse(src, dst);
        }
        let ng = self.ng(x);
        Ok(self.push(Op::Irfft(x), dims, Value::Real(out), ng))
    }

    /// Mode-wise complex channel mixing on the retained half-spectrum bins
    /// `modes`; all other bins of the output are zero. `r` has dims
    /// `[modes.len(), c_out, c_in, 2]`.
    pub fn spectral_mul(&mut self, x: Var, r: Var, modes: &Arc<[usize]>) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        let rd = self.dims(r).to_vec();
        self.complex(x)?;
        if rd.len() != 4 || rd[0] != modes.len() || rd[2] != xd[0] || rd[3] != 2 {
            return Err(Error::graph(format!(
                "spectral_mul: spectrum node {} {:?} incompatible with tensor node {} {:?}",
                x.0, xd, r.0, rd
            )));
        }
        let h = half_len(&xd);
        if modes.iter().any(|&k| k >= h) {
            return Err(Error::graph(format!("spectral_mul: retained bin out of range for node {}", x.0)));
        }
        let c_out = rd[1];
        let y = spectral_mul(self.complex(x)?, self.real(r)?, modes, xd[0], c_out, h);
        let mut dims = xd;
        dims[0] = c_out;
        let ng = self.ng(x) || self.ng(r);
        Ok(self.push(Op::SpectralMul { x, r, modes: modes.clone() }, dims, Value::Complex(y), ng))
    }

    // ----- convolutional -----

    /// Periodic 1D convolution, stride 1, odd kernel. `w` is
    /// `[c_out, c_in, k]`, `b` is `[c_out]`.
    pub fn conv_periodic(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        let wd = self.dims(w).to_vec();
        if xd.len() != 2 || wd.len() != 3 || wd[1] != xd[0] || wd[2] % 2 == 0 || self.dims(b) != [wd[0]] {
            return Err(Error::graph(format!(
                "conv_periodic: input node {} {:?} incompatible with kernel node {} {:?}",
                x.0, xd, w.0, wd
            )));
        }
        let y = conv1d(self.real(x)?, self.real(w)?, self.real(b)?, wd[1], wd[0], wd[2], xd[1]);
        let ng = self.ng(x) || self.ng(w) || self.ng(b);
        Ok(self.push(Op::Conv { x, w, b, kernel: wd[2] }, vec![wd[0], xd[1]], Value::Real(y), ng))
    }

    /// Size-2 max pooling along a 1D axis; ties go to the first element.
    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        if xd.len() != 2 || xd[1] % 2 != 0 {
            return Err(Error::graph(format!("maxpool2: node {} has dims {xd:?}", x.0)));
        }
        let xs = self.real(x)?;
        let mut y = Vec::with_capacity(xs.len() / 2);
        let mut argmax = Vec::with_capacity(xs.len() / 2);
        for (j, pair) in xs.chunks_exact(2).enumerate() {
            let pick = if pair[1] > pair[0] { 1 } else { 0 };
            y.push(pair[pick]);
            argmax.push((2 * j + pick) as u32);
        }
        let ng = self.ng(x);
        Ok(self.push(Op::MaxPool2 { x, argmax }, vec![xd[0], xd[1] / 2], Value::Real(y), ng))
    }

    /// Nearest-neighbour upsampling by 2 along a 1D axis.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let xd = self.dims(x).to_vec();
        if xd.len() != 2 {
            return Err(Error::graph(format!("upsample2: node {} has dims {xd:?}", x.0)));
        }
        let y = self.real(x)?.iter().flat_map(|&v| [v, v]).collect();
        let ng = self.ng(x);
        Ok(self.push(Op::Upsample2(x), vec![xd[0], 2 * xd[1]], Value::Real(y), ng))
    }

    pub fn concat_channels(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::graph("concat of zero nodes"))?;
        let spatial = self.dims(first)[1..].to_vec();
        let mut data = Vec::new();
        let mut c = 0;
        for &p in parts {
            if self.dims(p)[1..] != spatial[..] {
                return Err(Error::graph(format!(
                    "concat: node {} {:?} and node {} {:?} differ spatially",
                    first.0,
                    self.dims(first),
                    p.0,
                    self.dims(p)
                )));
            }
            c += self.dims(p)[0];
            data.extend_from_slice(self.real(p)?);
        }
        let mut dims = vec![c];
        dims.extend(spatial);
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::Concat(parts.to_vec()), dims, Value::Real(data), ng))
    }

    /// Normalization over all channels and positions with a per-channel
    /// gain `g` and offset `b`.
    pub fn layer_norm(&mut self, x: Var, g: Var, b: Var) -> Result<Var> {
        const EPS: f64 = 1e-5;
        let xd = self.dims(x).to_vec();
        if self.dims(g) != [xd[0]] || self.dims(b) != [xd[0]] {
            return Err(Error::graph(format!(
                "layer_norm: input node {} {:?} incompatible with gain node {} {:?}",
                x.0,
                xd,
                g.0,
                self.dims(g)
            )));
        }
        let xs = self.real(x)?;
        let m = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / m;
        let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
        let inv_std = 1.0 / (var + EPS).sqrt();
        let xhat: Vec<f64> = xs.iter().map(|v| (v - mean) * inv_std).collect();
        let n = spatial_len(&xd);
        let (gs, bs) = (self.real(g)?, self.real(b)?);
        let y = xhat.iter().enumerate().map(|(idx, v)| gs[idx / n] * v + bs[idx / n]).collect();
        let ng = self.ng(x) || self.ng(g) || self.ng(b);
        Ok(self.push(Op::LayerNorm { x, g, b, xhat, inv_std }, xd, Value::Real(y), ng))
    }

    // ----- reductions -----

    /// Relative L2 discrepancy `‖pred − target‖ / ‖target‖` as a scalar.
    pub fn rel_l2(&mut self, pred: Var, target: Var) -> Result<Var> {
        self.expect_same_dims(pred, target)?;
        let (p, t) = (self.real(pred)?, self.real(target)?);
        let target_norm = dot(t, t).sqrt();
        if target_norm == 0.0 {
            return Err(Error::config(format!("relative L2 against zero-norm target node {}", target.0)));
        }
        let diff_norm = p.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let ng = self.ng(pred) || self.ng(target);
        Ok(self.push(
            Op::RelL2 { pred, target, diff_norm, target_norm },
            vec![],
            Value::Real(vec![diff_norm / target_norm]),
            ng,
        ))
    }

    /// `Σ x²` as a scalar.
    pub fn squared_norm(&mut self, x: Var) -> Result<Var> {
        let xs = self.real(x)?;
        let v = dot(xs, xs);
        let ng = self.ng(x);
        Ok(self.push(Op::SquaredNorm(x), vec![], Value::Real(vec![v]), ng))
    }

    // ----- step-axis plumbing -----

    /// Stacks `[c, S..]` tensors into `[c, len, S..]`.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::graph("stack of zero nodes"))?;
        let d = self.dims(first).to_vec();
        let rest = spatial_len(&d);
        let t = parts.len();
        let mut data = vec![0.0; d[0] * t * rest];
        for (j, &p) in parts.iter().enumerate() {
            self.expect_same_dims(first, p)?;
            let xs = self.real(p)?;
            for c in 0..d[0] {
                data[(c * t + j) * rest..(c * t + j + 1) * rest].copy_from_slice(&xs[c * rest..(c + 1) * rest]);
            }
        }
        let mut dims = vec![d[0], t];
        dims.extend_from_slice(&d[1..]);
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(Op::Stack(parts.to_vec()), dims, Value::Real(data), ng))
    }

    /// Slice `index` of the first spatial axis: `[c, T, S..] -> [c, S..]`.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let d = self.dims(x).to_vec();
        if d.len() < 3 || index >= d[1] {
            return Err(Error::graph(format!("select: index {index} invalid for node {} {d:?}", x.0)));
        }
        let t = d[1];
        let rest: usize = d[2..].iter().product();
        let xs = self.real(x)?;
        let mut data = Vec::with_capacity(d[0] * rest);
        for c in 0..d[0] {
            data.extend_from_slice(&xs[(c * t + index) * rest..(c * t + index + 1) * rest]);
        }
        let mut dims = vec![d[0]];
        dims.extend_from_slice(&d[2..]);
        let ng = self.ng(x);
        Ok(self.push(Op::Select { x, index }, dims, Value::Real(data), ng))
    }

    /// Zero-pads the first spatial axis to `len`.
    pub fn pad_axis(&mut self, x: Var, len: usize) -> Result<Var> {
        let d = self.dims(x).to_vec();
        if d.len() < 2 || len < d[1] {
            return Err(Error::graph(format!("pad_axis: cannot pad node {} {d:?} to {len}", x.0)));
        }
        let rest: usize = d[2..].iter().product();
        let xs = self.real(x)?;
        let mut data = vec![0.0; d[0] * len * rest];
        for c in 0..d[0] {
            data[c * len * rest..(c * len + d[1]) * rest].copy_from_slice(&xs[c * d[1] * rest..(c + 1) * d[1] * rest]);
        }
        let mut dims = d.clone();
        dims[1] = len;
        let ng = self.ng(x);
        Ok(self.push(Op::PadAxis { x, from: d[1] }, dims, Value::Real(data), ng))
    }

    /// Keeps the first `len` entries of the first spatial axis.
    pub fn crop_axis(&mut self, x: Var, len: usize) -> Result<Var> {
        let d = self.dims(x).to_vec();
        if d.len() < 2 || len > d[1] {
            return Err(Error::graph(format!("crop_axis: cannot crop node {} {d:?} to {len}", x.0)));
        }
        let rest: usize = d[2..].iter().product();
        let xs = self.real(x)?;
        let mut data = Vec::with_capacity(d[0] * len * rest);
        for c in 0..d[0] {
            data.extend_from_slice(&xs[c * d[1] * rest..(c * d[1] + len) * rest]);
        }
        let mut dims = d;
        dims[1] = len;
        let ng = self.ng(x);
        Ok(self.push(Op::CropAxis { x }, dims, Value::Real(data), ng))
    }

    /// Hash of every discrete branch taken (ReLU signs, max-pool winners).
    /// Two evaluations with equal signatures lie in the same smooth piece.
    pub fn kink_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for node in &self.nodes {
            match &node.op {
                Op::Act { x, kind: Activation::Relu, .. } => {
                    if let Value::Real(xs) = &self.nodes[x.0].value {
                        for chunk in xs.chunks(64) {
                            let bits = chunk.iter().enumerate().fold(0u64, |acc, (i, &v)| acc | (((v > 0.0) as u64) << i));
                            mix(bits);
                        }
                    }
                }
                Op::MaxPool2 { argmax, .. } => argmax.iter().for_each(|&a| mix(a as u64)),
                _ => {}
            }
        }
        h
    }

    /// Reverse sweep from the scalar `loss`. Returns the gradient with
    /// respect to every parameter leaf, laid out like a parameter vector of
    /// length `n_params`.
    pub fn backward(&self, loss: Var, n_params: usize) -> Result<Vec<f64>> {
        self.check_var(loss)?;
        if self.nodes[loss.0].dims.iter().product::<usize>() != 1 {
            return Err(Error::Usage(format!("backward from non-scalar node {}", loss.0)));
        }
        self.sweep(loss, Value::Real(vec![1.0]), n_params)
    }

    /// Vector-Jacobian product of a real node with cotangent `seed`.
    pub fn vjp(&self, out: Var, seed: &[f64], n_params: usize) -> Result<Vec<f64>> {
        self.check_var(out)?;
        if self.real(out)?.len() != seed.len() {
            return Err(Error::Usage(format!("cotangent length {} for node {}", seed.len(), out.0)));
        }
        self.sweep(out, Value::Real(seed.to_vec()), n_params)
    }

    /// Vector-Jacobian product of a complex node under the pairing
    /// `Re Σ conj(seed) · y`.
    pub fn vjp_complex(&self, out: Var, seed: &[Complex64], n_params: usize) -> Result<Vec<f64>> {
        self.check_var(out)?;
        if self.complex(out)?.len() != seed.len() {
            return Err(Error::Usage(format!("cotangent length {} for node {}", seed.len(), out.0)));
        }
        self.sweep(out, Value::Complex(seed.to_vec()), n_params)
    }

    fn check_var(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "backward from node {} but the tape holds {} nodes",
                v.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn sweep(&self, out: Var, seed: Value, n_params: usize) -> Result<Vec<f64>> {
        let mut grads: Vec<Option<Value>> = vec![None; out.0 + 1];
        grads[out.0] = Some(seed);
        let mut params = vec![0.0; n_params];
        for i in (0..=out.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, g, &mut grads, &mut params)?;
        }
        Ok(params)
    }

    fn acc_real(&self, grads: &mut [Option<Value>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.ng(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| self.nodes[v.0].value.zeros_like());
        match slot {
            Value::Real(buf) => f(buf),
            Value::Complex(_) => unreachable!("real adjoint for complex node"),
        }
    }

    fn acc_complex(&self, grads: &mut [Option<Value>], v: Var, f: impl FnOnce(&mut [Complex64])) {
        if !self.ng(v) {
            return;
        }
        let slot = grads[v.0].get_or_insert_with(|| self.nodes[v.0].value.zeros_like());
        match slot {
            Value::Complex(buf) => f(buf),
            Value::Real(_) => unreachable!("complex adjoint for real node"),
        }
    }

    fn propagate(&self, node: &Node, g: Value, grads: &mut [Option<Value>], out: &mut [f64]) -> Result<()> {
        match (&node.op, g) {
            (Op::Constant, _) => {}
            (Op::Param { offset }, Value::Real(g)) => axpy(&mut out[*offset..*offset + g.len()], &g, 1.0),
            (Op::ComplexParam { offset }, Value::Complex(g)) => {
                for (j, v) in g.iter().enumerate() {
                    out[offset + 2 * j] += v.re;
                    out[offset + 2 * j + 1] += v.im;
                }
            }
            (Op::Add(a, b), Value::Real(g)) => {
                self.acc_real(grads, *a, |d| axpy(d, &g, 1.0));
                self.acc_real(grads, *b, |d| axpy(d, &g, 1.0));
            }
            (Op::Add(a, b), Value::Complex(g)) => {
                for v in [*a, *b] {
                    self.acc_complex(grads, v, |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x += y));
                }
            }
            (Op::Sum(parts), Value::Real(g)) => {
                for &p in parts {
                    self.acc_real(grads, p, |d| axpy(d, &g, 1.0));
                }
            }
            (Op::Scale(a, s), Value::Real(g)) => self.acc_real(grads, *a, |d| axpy(d, &g, *s)),
            (Op::Scale(a, s), Value::Complex(g)) => {
                self.acc_complex(grads, *a, |d| d.iter_mut().zip(&g).for_each(|(x, y)| *x += y * *s))
            }
            (Op::ChannelMix { x, w, b }, Value::Real(g)) => {
                let wd = self.dims(*w);
                let (c_out, c_in) = (wd[0], wd[1]);
                let n = g.len() / c_out;
                let ws = self.real(*w)?;
                self.acc_real(grads, *x, |d| {
                    for o in 0..c_out {
                        for i in 0..c_in {
                            axpy(&mut d[i * n..(i + 1) * n], &g[o * n..(o + 1) * n], ws[o * c_in + i]);
                        }
                    }
                });
                let xs = self.real(*x)?;
                self.acc_real(grads, *w, |d| {
                    for o in 0..c_out {
                        for i in 0..c_in {
                            d[o * c_in + i] += dot(&g[o * n..(o + 1) * n], &xs[i * n..(i + 1) * n]);
                        }
                    }
                });
                if let Some(b) = b {
                    self.acc_real(grads, *b, |d| {
                        for o in 0..c_out {
                            d[o] += g[o * n..(o + 1) * n].iter().sum::<f64>();
                        }
                    });
                }
            }
            (Op::Act { x, kind, slope }, Value::Real(g)) => {
                let xs = self.real(*x)?;
                self.acc_real(grads, *x, |d| {
                    if slope.is_empty() {
                        for ((d, gv), xv) in d.iter_mut().zip(&g).zip(xs) {
                            *d += gv * kind.derivative(*xv);
                        }
                    } else {
                        for ((d, gv), s) in d.iter_mut().zip(&g).zip(slope) {
                            *d += gv * s;
                        }
                    }
                });
            }
            (Op::Rfft(x), Value::Complex(g)) => {
                // adjoint of the unnormalized half-spectrum transform:
                // irfft(N g / c) with c the Hermitian multiplicity
                let dims = self.dims(*x);
                let p = plan(&dims[1..]);
                let (n, h) = (p.real_len(), p.complex_len());
                let w = p.hermitian_weights();
                self.acc_real(grads, *x, |d| {
                    let mut work = vec![Complex64::new(0.0, 0.0); h];
                    let mut tmp = vec![0.0; n];
                    for (gc, dc) in g.chunks_exact(h).zip(d.chunks_exact_mut(n)) {
                        for ((wk, gk), ck) in work.iter_mut().zip(gc).zip(&w) {
                            *wk = gk * (n as f64 / ck);
                        }
                        p.inverse_in_place(&mut work, &mut tmp);
                        axpy(dc, &tmp, 1.0);
                    }
                });
            }
            (Op::Irfft(x), Value::Real(g)) => {
                // adjoint of the normalized inverse: (c / N) rfft(g)
                let dims = self.dims(*x);
                let p = plan(&dims[1..]);
                let (n, h) = (p.real_len(), p.complex_len());
                let w = p.hermitian_weights();
                self.acc_complex(grads, *x, |d| {
                    let mut spec = vec![Complex64::new(0.0, 0.0); h];
                    for (gc, dc) in g.chunks_exact(n).zip(d.chunks_exact_mut(h)) {
                        p.forward(gc, &mut spec);
                        for ((dk, sk), ck) in dc.iter_mut().zip(&spec).zip(&w) {
                            *dk += sk * (ck / n as f64);
                        }
                    }
                });
            }
            (Op::SpectralMul { x, r, modes }, Value::Complex(g)) => {
                let rd = self.dims(*r);
                let (c_out, c_in) = (rd[1], rd[2]);
                let h = half_len(self.dims(*x));
                let rs = self.real(*r)?;
                let xs = self.complex(*x)?;
                self.acc_complex(grads, *x, |d| {
                    for (m, &k) in modes.iter().enumerate() {
                        let base = m * c_out * c_in;
                        for o in 0..c_out {
                            let gk = g[o * h + k];
                            for i in 0..c_in {
                                let idx = 2 * (base + o * c_in + i);
                                d[i * h + k] += Complex64::new(rs[idx], -rs[idx + 1]) * gk;
                            }
                        }
                    }
                });
                self.acc_real(grads, *r, |d| {
                    for (m, &k) in modes.iter().enumerate() {
                        let base = m * c_out * c_in;
                        for o in 0..c_out {
                            let gk = g[o * h + k];
                            for i in 0..c_in {
                                let v = gk * xs[i * h + k].conj();
                                let idx = 2 * (base + o * c_in + i);
                                d[idx] += v.re;
                                d[idx + 1] += v.im;
                            }
                        }
                    }
                });
            }
            (Op::Conv { x, w, b, kernel }, Value::Real(g)) => {
                let wd = self.dims(*w);
                let (c_out, c_in, k) = (wd[0], wd[1], *kernel);
                let n = self.dims(*x)[1];
                let half = (k / 2) as isize;
                let ws = self.real(*w)?;
                let xs = self.real(*x)?;
                self.acc_real(grads, *x, |d| {
                    for o in 0..c_out {
                        let go = &g[o * n..(o + 1) * n];
                        for i in 0..c_in {
                            for t in 0..k {
                                // y[s] += w x[s + t - half]  =>  dx[s'] += w g[s' - t + half]
                                shifted_axpy(&mut d[i * n..(i + 1) * n], go, half - t as isize, ws[(o * c_in + i) * k + t]);
                            }
                        }
                    }
                });
                self.acc_real(grads, *w, |d| {
                    for o in 0..c_out {
                        let go = &g[o * n..(o + 1) * n];
                        for i in 0..c_in {
                            for t in 0..k {
                                d[(o * c_in + i) * k + t] += shifted_dot(go, &xs[i * n..(i + 1) * n], t as isize - half);
                            }
                        }
                    }
                });
                self.acc_real(grads, *b, |d| {
                    for o in 0..c_out {
                        d[o] += g[o * n..(o + 1) * n].iter().sum::<f64>();
                    }
                });
            }
            (Op::MaxPool2 { x, argmax }, Value::Real(g)) => {
                self.acc_real(grads, *x, |d| {
                    for (gv, &a) in g.iter().zip(argmax) {
                        d[a as usize] += gv;
                    }
                });
            }
            (Op::Upsample2(x), Value::Real(g)) => {
                self.acc_real(grads, *x, |d| {
                    for (dv, pair) in d.iter_mut().zip(g.chunks_exact(2)) {
                        *dv += pair[0] + pair[1];
                    }
                });
            }
            (Op::Concat(parts), Value::Real(g)) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.nodes[p.0].dims.iter().product::<usize>();
                    self.acc_real(grads, p, |d| axpy(d, &g[start..start + len], 1.0));
                    start += len;
                }
            }
            (Op::LayerNorm { x, g: gain, b, xhat, inv_std }, Value::Real(g)) => {
                let c = self.dims(*x)[0];
                let n = g.len() / c;
                let gs = self.real(*gain)?;
                let m = g.len() as f64;
                let gxhat: Vec<f64> = g.iter().enumerate().map(|(idx, v)| v * gs[idx / n]).collect();
                let mean_g = gxhat.iter().sum::<f64>() / m;
                let mean_gx = dot(&gxhat, xhat) / m;
                self.acc_real(grads, *x, |d| {
                    for ((dv, gh), xh) in d.iter_mut().zip(&gxhat).zip(xhat) {
                        *dv += inv_std * (gh - mean_g - xh * mean_gx);
                    }
                });
                self.acc_real(grads, *gain, |d| {
                    for ch in 0..c {
                        d[ch] += dot(&g[ch * n..(ch + 1) * n], &xhat[ch * n..(ch + 1) * n]);
                    }
                });
                self.acc_real(grads, *b, |d| {
                    for ch in 0..c {
                        d[ch] += g[ch * n..(ch + 1) * n].iter().sum::<f64>();
                    }
                });
            }
            (Op::RelL2 { pred, target, diff_norm, target_norm }, Value::Real(g)) => {
                let (p, t) = (self.real(*pred)?, self.real(*target)?);
                let g0 = g[0];
                if *diff_norm > 0.0 {
                    let s = g0 / (diff_norm * target_norm);
                    self.acc_real(grads, *pred, |d| {
                        for ((dv, a), b) in d.iter_mut().zip(p).zip(t) {
                            *dv += s * (a - b);
                        }
                    });
                }
                let ratio = diff_norm / (target_norm * target_norm * target_norm);
                self.acc_real(grads, *target, |d| {
                    let s = if *diff_norm > 0.0 { g0 / (diff_norm * target_norm) } else { 0.0 };
                    for ((dv, a), b) in d.iter_mut().zip(p).zip(t) {
                        *dv += -s * (a - b) - g0 * ratio * b;
                    }
                });
            }
            (Op::SquaredNorm(x), Value::Real(g)) => {
                let xs = self.real(*x)?;
                self.acc_real(grads, *x, |d| axpy(d, xs, 2.0 * g[0]));
            }
            (Op::Stack(parts), Value::Real(g)) => {
                let d0 = self.dims(parts[0]);
                let rest = spatial_len(d0);
                let t = parts.len();
                for (j, &p) in parts.iter().enumerate() {
                    self.acc_real(grads, p, |d| {
                        for c in 0..d0[0] {
                            axpy(&mut d[c * rest..(c + 1) * rest], &g[(c * t + j) * rest..(c * t + j + 1) * rest], 1.0);
                        }
                    });
                }
            }
            (Op::Select { x, index }, Value::Real(g)) => {
                let d = self.dims(*x);
                let (c, t) = (d[0], d[1]);
                let rest: usize = d[2..].iter().product();
                self.acc_real(grads, *x, |dx| {
                    for ch in 0..c {
                        axpy(&mut dx[(ch * t + index) * rest..(ch * t + index + 1) * rest], &g[ch * rest..(ch + 1) * rest], 1.0);
                    }
                });
            }
            (Op::PadAxis { x, from }, Value::Real(g)) => {
                let d = &node.dims;
                let rest: usize = d[2..].iter().product();
                let len = d[1];
                self.acc_real(grads, *x, |dx| {
                    for c in 0..d[0] {
                        axpy(&mut dx[c * from * rest..(c + 1) * from * rest], &g[c * len * rest..(c * len + from) * rest], 1.0);
                    }
                });
            }
            (Op::CropAxis { x }, Value::Real(g)) => {
                let d = self.dims(*x);
                let rest: usize = d[2..].iter().product();
                let len = node.dims[1];
                self.acc_real(grads, *x, |dx| {
                    for c in 0..d[0] {
                        axpy(&mut dx[c * d[1] * rest..(c * d[1] + len) * rest], &g[c * len * rest..(c + 1) * len * rest], 1.0);
                    }
                });
            }
            (op, _) => {
                return Err(Error::graph(format!("adjoint kind mismatch for {op:?}")));
            }
        }
        Ok(())
    }
}
