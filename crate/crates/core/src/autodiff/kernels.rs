//! Dense loops behind the tape primitives. Layouts are channel-major with
//! the spatial extent flattened into `n`.

use num_complex::Complex64;

/// `dst[s] += alpha * src[(s + shift) mod n]`.
#[inline]
pub fn shifted_axpy(dst: &mut [f64], src: &[f64], shift: isize, alpha: f64) {
    let n = src.len() as isize;
    let sh = shift.rem_euclid(n) as usize;
    let n = n as usize;
    let (head, tail) = dst.split_at_mut(n - sh);
    for (d, s) in head.iter_mut().zip(&src[sh..]) {
        *d += alpha * s;
    }
    for (d, s) in tail.iter_mut().zip(&src[..sh]) {
        *d += alpha * s;
    }
}

/// `Σ_s a[s] * b[(s + shift) mod n]`.
#[inline]
pub fn shifted_dot(a: &[f64], b: &[f64], shift: isize) -> f64 {
    let n = b.len() as isize;
    let sh = shift.rem_euclid(n) as usize;
    let n = n as usize;
    let (head, tail) = a.split_at(n - sh);
    dot(head, &b[sh..]) + dot(tail, &b[..sh])
}

#[inline]
pub fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for j in 0..4 {
            acc[j] += x[j] * y[j];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `y[o] = Σ_i w[o, i] x[i] + b[o]` for rows of length `n`.
pub fn channel_mix(x: &[f64], w: &[f64], b: Option<&[f64]>, c_in: usize, c_out: usize, n: usize) -> Vec<f64> {
    let mut y = vec![0.0; c_out * n];
    for o in 0..c_out {
        let row = &mut y[o * n..(o + 1) * n];
        if let Some(b) = b {
            row.iter_mut().for_each(|v| *v = b[o]);
        }
        for i in 0..c_in {
            axpy(row, &x[i * n..(i + 1) * n], w[o * c_in + i]);
        }
    }
    y
}

/// Periodic 1D convolution with centred odd kernel `k`.
pub fn conv1d(x: &[f64], w: &[f64], b: &[f64], c_in: usize, c_out: usize, k: usize, n: usize) -> Vec<f64> {
    let half = (k / 2) as isize;
    let mut y = vec![0.0; c_out * n];
    for o in 0..c_out {
        let row = &mut y[o * n..(o + 1) * n];
        row.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..c_in {
            let xi = &x[i * n..(i + 1) * n];
            for t in 0..k {
                shifted_axpy(row, xi, t as isize - half, w[(o * c_in + i) * k + t]);
            }
        }
    }
    y
}

pub const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
pub const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * x * (1.0 + t)
}

#[inline]
pub fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

/// `(gelu(x), gelu'(x))` from a single tanh.
#[inline]
pub fn gelu_with_grad(x: f64) -> (f64, f64) {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    (0.5 * x * (1.0 + t), 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x))
}

/// Mode-wise complex matrix product on the retained bins:
/// `y[o, k] = Σ_i R[m, o, i] x[i, k]` with `k = modes[m]`; other bins zero.
pub fn spectral_mul(
    x: &[Complex64],
    r: &[f64],
    modes: &[usize],
    c_in: usize,
    c_out: usize,
    h: usize,
) -> Vec<Complex64> {
    let mut y = vec![Complex64::new(0.0, 0.0); c_out * h];
    for (m, &k) in modes.iter().enumerate() {
        let base = m * c_out * c_in;
        for o in 0..c_out {
            let mut acc = Complex64::new(0.0, 0.0);
            for i in 0..c_in {
                let idx = 2 * (base + o * c_in + i);
                acc += Complex64::new(r[idx], r[idx + 1]) * x[i * h + k];
            }
            y[o * h + k] = acc;
        }
    }
    y
}
