//! Periodic grids, real fields, their Fourier spectra and the spectral
//! operators shared by the solver and the neural operators.
//!
//! The domain is `(-π, π]^d` with `p` points per axis. Fields are stored
//! channel-major, then row-major over grid points. Spectra keep only the
//! non-negative half of the last axis.

pub mod fft;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use fft::{plan, signed_wavenumber, RealFftNd};

/// Uniform periodic grid on `(-π, π]^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    dim: usize,
    points: usize,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    dim: usize,
    points: usize,
}

impl TryFrom<GridRepr> for Grid {
    type Error = Error;
    fn try_from(r: GridRepr) -> Result<Self> {
        Grid::new(r.dim, r.points)
    }
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        GridRepr { dim: g.dim, points: g.points }
    }
}

impl Grid {
    pub fn new(dim: usize, points: usize) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if points < 2 || !points.is_power_of_two() {
            return Err(Error::config(format!(
                "points per axis must be a power of two >= 2, got {points}"
            )));
        }
        Ok(Grid { dim, points })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.points as f64
    }

    /// Total number of grid points, `p^d`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn shape(&self) -> Vec<usize> {
        vec![self.points; self.dim]
    }

    pub fn half_shape(&self) -> Vec<usize> {
        let mut s = self.shape();
        *s.last_mut().unwrap() = self.points / 2 + 1;
        s
    }

    pub fn half_len(&self) -> usize {
        self.half_shape().iter().product()
    }

    /// Coordinates along one axis: `x_j = -π + (j + 1) h`.
    pub fn axis_coords(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.points).map(|j| -PI + (j + 1) as f64 * h).collect()
    }

    /// Domain measure `(2π)^d`.
    pub fn measure(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// Wave vectors of the half spectrum in storage order.
    pub fn half_modes(&self) -> Vec<Mode> {
        let p = self.points;
        let half = p / 2 + 1;
        match self.dim {
            1 => (0..half)
                .map(|k| Mode { k: [k as i64, 0], nyquist: [k == p / 2, false] })
                .collect(),
            _ => {
                let mut out = Vec::with_capacity(p * half);
                for i in 0..p {
                    for k in 0..half {
                        out.push(Mode {
                            k: [signed_wavenumber(i, p), k as i64],
                            nyquist: [i == p / 2, k == p / 2],
                        });
                    }
                }
                out
            }
        }
    }
}

/// One half-spectrum bin: its wave vector and which components sit on the
/// Nyquist frequency. Unused components are zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mode {
    pub k: [i64; 2],
    pub nyquist: [bool; 2],
}

impl Mode {
    pub fn norm_sq(&self) -> f64 {
        (self.k[0] * self.k[0] + self.k[1] * self.k[1]) as f64
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }
}

/// Real multi-channel field on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    channels: usize,
    values: Vec<f64>,
}

impl Field {
    pub fn new(grid: Grid, channels: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::config("field needs at least one channel"));
        }
        if values.len() != channels * grid.len() {
            return Err(Error::config(format!(
                "field expects {} values, got {}",
                channels * grid.len(),
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Divergence(format!("non-finite field value at index {i}")));
        }
        Ok(Field { grid, channels, values })
    }

    /// Builds a field without the finiteness check; lengths must agree.
    pub(crate) fn from_raw(grid: Grid, channels: usize, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), channels * grid.len());
        Field { grid, channels, values }
    }

    pub fn zeros(grid: Grid, channels: usize) -> Self {
        Field { grid, channels, values: vec![0.0; channels * grid.len()] }
    }

    /// Single-channel field sampled from `f(x)` (1D) or `f(x, y)` with
    /// `x` along the first axis (2D). The closure receives `[x, y]`.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> Self {
        let c = grid.axis_coords();
        let values = match grid.dim() {
            1 => c.iter().map(|&x| f([x, 0.0])).collect(),
            _ => c.iter().flat_map(|&x| c.iter().map(move |&y| (x, y))).map(|(x, y)| f([x, y])).collect(),
        };
        Field { grid, channels: 1, values }
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.grid.len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Periodic shift by `offset` points along `axis`: the value at index
    /// `j` moves to `j + offset`.
    pub fn shifted(&self, axis: usize, offset: i64) -> Field {
        assert!(axis < self.grid.dim());
        let p = self.grid.points();
        let n = self.grid.len();
        let stride = if self.grid.dim() == 2 && axis == 0 { p } else { 1 };
        let off = offset.rem_euclid(p as i64) as usize;
        let mut out = vec![0.0; self.values.len()];
        for c in 0..self.channels {
            let src = &self.values[c * n..(c + 1) * n];
            let dst = &mut out[c * n..(c + 1) * n];
            for (idx, &v) in src.iter().enumerate() {
                let j = (idx / stride) % p;
                let nj = (j + off) % p;
                dst[idx - j * stride + nj * stride] = v;
            }
        }
        Field { grid: self.grid, channels: self.channels, values: out }
    }

    fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        assert_eq!(self.grid, other.grid);
        assert_eq!(self.channels, other.channels);
        let values = self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect();
        Field { grid: self.grid, channels: self.channels, values }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field {
        let values = self.values.iter().map(|v| v * s).collect();
        Field { grid: self.grid, channels: self.channels, values }
    }
}

/// Half spectrum of a real field.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: Grid,
    channels: usize,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn new(grid: Grid, channels: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != channels * grid.half_len() {
            return Err(Error::config(format!(
                "spectrum expects {} coefficients, got {}",
                channels * grid.half_len(),
                coeffs.len()
            )));
        }
        Ok(Spectrum { grid, channels, coeffs })
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn channel(&self, c: usize) -> &[Complex64] {
        let n = self.grid.half_len();
        &self.coeffs[c * n..(c + 1) * n]
    }

    /// Multiplies every bin of every channel by `symbol(mode)`.
    pub fn apply(&mut self, symbol: impl Fn(&Mode) -> Complex64) {
        let modes = self.grid.half_modes();
        let factors: Vec<Complex64> = modes.iter().map(symbol).collect();
        for chunk in self.coeffs.chunks_exact_mut(factors.len()) {
            for (c, f) in chunk.iter_mut().zip(&factors) {
                *c *= f;
            }
        }
    }
}

/// Unnormalized forward transform, channel by channel.
pub fn fft_forward(f: &Field) -> Spectrum {
    let grid = f.grid();
    let plan = plan(&grid.shape());
    let half = grid.half_len();
    let mut coeffs = vec![Complex64::new(0.0, 0.0); f.channels() * half];
    for (c, out) in coeffs.chunks_exact_mut(half).enumerate() {
        plan.forward(f.channel(c), out);
    }
    Spectrum { grid, channels: f.channels(), coeffs }
}

/// Inverse transform with the `1/p^d` normalization.
pub fn fft_inverse(s: &Spectrum) -> Field {
    let grid = s.grid();
    let plan = plan(&grid.shape());
    let n = grid.len();
    let mut values = vec![0.0; s.channels() * n];
    for (c, out) in values.chunks_exact_mut(n).enumerate() {
        plan.inverse(s.channel(c), out);
    }
    Field::from_raw(grid, s.channels(), values)
}

fn apply_symbol(f: &Field, symbol: impl Fn(&Mode) -> Complex64) -> Field {
    let mut s = fft_forward(f);
    s.apply(symbol);
    fft_inverse(&s)
}

/// Non-local operator Γ: multiplies each mode by `|κ|`.
pub fn gamma(f: &Field) -> Field {
    apply_symbol(f, |m| Complex64::new(m.norm(), 0.0))
}

/// Which spectral derivative to take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Derivative {
    Grad,
    Laplacian,
    Biharmonic,
}

/// Spectral derivative. `Grad` returns one field per axis; the other
/// variants return a single field. Odd derivatives vanish on Nyquist bins.
pub fn spectral_derivative(f: &Field, which: Derivative) -> Vec<Field> {
    match which {
        Derivative::Grad => grad(f),
        Derivative::Laplacian => vec![laplacian(f)],
        Derivative::Biharmonic => vec![biharmonic(f)],
    }
}

pub fn grad(f: &Field) -> Vec<Field> {
    let s = fft_forward(f);
    (0..f.grid().dim())
        .map(|axis| {
            let mut sa = s.clone();
            sa.apply(|m| {
                if m.nyquist[axis] {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(0.0, m.k[axis] as f64)
                }
            });
            fft_inverse(&sa)
        })
        .collect()
}

pub fn laplacian(f: &Field) -> Field {
    apply_symbol(f, |m| Complex64::new(-m.norm_sq(), 0.0))
}

pub fn biharmonic(f: &Field) -> Field {
    apply_symbol(f, |m| Complex64::new(m.norm_sq() * m.norm_sq(), 0.0))
}

/// Governing front equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Equation {
    /// Michelson-Sivashinsky (hydrodynamic instability).
    #[serde(rename = "MS")]
    Ms,
    /// Kuramoto-Sivashinsky (diffusive-thermal instability).
    #[serde(rename = "KS")]
    Ks,
}

impl Equation {
    pub fn code(self) -> u32 {
        match self {
            Equation::Ms => 0,
            Equation::Ks => 1,
        }
    }

    pub fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Equation::Ms),
            1 => Ok(Equation::Ks),
            _ => Err(Error::Format(format!("unknown equation code {code}"))),
        }
    }
}

/// DL time-scale parameter `τ = β/10`.
pub fn tau(beta: f64) -> f64 {
    beta / 10.0
}

/// Linear growth rate `ω(|κ|)` of a Fourier mode.
pub fn dispersion_symbol(eq: Equation, beta: f64, kappa: f64) -> f64 {
    let k = kappa.abs();
    match eq {
        Equation::Ms => tau(beta) * (k / beta - k * k / (beta * beta)),
        Equation::Ks => {
            let r = k * k / (beta * beta);
            r - r * r
        }
    }
}
