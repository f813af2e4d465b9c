//! Multi-dimensional real-to-complex transforms on row-major arrays.
//!
//! The last axis is transformed real-to-complex and stored with Hermitian
//! symmetry (`n/2 + 1` entries); every other axis is a full complex
//! transform. The forward transform is unnormalized and the inverse carries
//! the `1/N` factor, so `inverse(forward(x)) == x`.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

/// Plan for one real array shape.
pub struct RealFftNd {
    dims: Vec<usize>,
    half_dims: Vec<usize>,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    axis_fwd: Vec<Arc<dyn Fft<f64>>>,
    axis_inv: Vec<Arc<dyn Fft<f64>>>,
}

impl std::fmt::Debug for RealFftNd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RealFftNd").field("dims", &self.dims).finish()
    }
}

fn plan_cache() -> &'static Mutex<HashMap<Vec<usize>, Arc<RealFftNd>>> {
    static CACHE: OnceLock<Mutex<HashMap<Vec<usize>, Arc<RealFftNd>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Returns a shared plan for `dims`, building it on first use.
pub fn plan(dims: &[usize]) -> Arc<RealFftNd> {
    let mut cache = plan_cache().lock().expect("fft plan cache poisoned");
    cache
        .entry(dims.to_vec())
        .or_insert_with(|| Arc::new(RealFftNd::new(dims)))
        .clone()
}

impl RealFftNd {
    /// Builds a plan. Every entry of `dims` must be non-zero and the last
    /// one even.
    pub fn new(dims: &[usize]) -> Self {
        assert!(!dims.is_empty() && dims.iter().all(|&n| n > 0));
        let last = *dims.last().unwrap();
        assert!(last % 2 == 0, "last axis must have even length");
        let mut half_dims = dims.to_vec();
        *half_dims.last_mut().unwrap() = last / 2 + 1;

        let mut rplanner = RealFftPlanner::<f64>::new();
        let mut cplanner = FftPlanner::<f64>::new();
        let outer = &dims[..dims.len() - 1];
        RealFftNd {
            dims: dims.to_vec(),
            half_dims,
            r2c: rplanner.plan_fft_forward(last),
            c2r: rplanner.plan_fft_inverse(last),
            axis_fwd: outer.iter().map(|&n| cplanner.plan_fft_forward(n)).collect(),
            axis_inv: outer.iter().map(|&n| cplanner.plan_fft_inverse(n)).collect(),
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn half_dims(&self) -> &[usize] {
        &self.half_dims
    }

    pub fn real_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn complex_len(&self) -> usize {
        self.half_dims.iter().product()
    }

    /// Unnormalized forward transform of one real array.
    pub fn forward(&self, input: &[f64], output: &mut [Complex64]) {
        debug_assert_eq!(input.len(), self.real_len());
        debug_assert_eq!(output.len(), self.complex_len());
        let last = *self.dims.last().unwrap();
        let half = last / 2 + 1;
        let mut row = self.r2c.make_input_vec();
        let mut scratch = self.r2c.make_scratch_vec();
        for (src, dst) in input.chunks_exact(last).zip(output.chunks_exact_mut(half)) {
            row.copy_from_slice(src);
            self.r2c
                .process_with_scratch(&mut row, dst, &mut scratch)
                .expect("r2c length mismatch");
        }
        for axis in 0..self.axis_fwd.len() {
            self.strided_pass(output, axis, &self.axis_fwd[axis]);
        }
    }

    /// Normalized inverse transform. The imaginary parts of the zero and
    /// Nyquist bins along the last axis are discarded, i.e. the result is
    /// the real part of the Hermitian completion.
    pub fn inverse(&self, input: &[Complex64], output: &mut [f64]) {
        debug_assert_eq!(input.len(), self.complex_len());
        debug_assert_eq!(output.len(), self.real_len());
        let mut work = input.to_vec();
        self.inverse_in_place(&mut work, output);
    }

    /// Like [`inverse`](Self::inverse) but consumes `work` as scratch.
    pub fn inverse_in_place(&self, work: &mut [Complex64], output: &mut [f64]) {
        for axis in 0..self.axis_inv.len() {
            self.strided_pass(work, axis, &self.axis_inv[axis]);
        }
        let last = *self.dims.last().unwrap();
        let half = last / 2 + 1;
        let mut scratch = self.c2r.make_scratch_vec();
        let norm = 1.0 / self.real_len() as f64;
        for (src, dst) in work.chunks_exact_mut(half).zip(output.chunks_exact_mut(last)) {
            src[0].im = 0.0;
            src[half - 1].im = 0.0;
            self.c2r
                .process_with_scratch(src, dst, &mut scratch)
                .expect("c2r length mismatch");
            for v in dst.iter_mut() {
                *v *= norm;
            }
        }
    }

    fn strided_pass(&self, data: &mut [Complex64], axis: usize, fft: &Arc<dyn Fft<f64>>) {
        let len = self.half_dims[axis];
        let stride: usize = self.half_dims[axis + 1..].iter().product();
        let outer: usize = self.half_dims[..axis].iter().product();
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        for o in 0..outer {
            let base = o * len * stride;
            for i in 0..stride {
                for (k, b) in buf.iter_mut().enumerate() {
                    *b = data[base + k * stride + i];
                }
                fft.process_with_scratch(&mut buf, &mut scratch);
                for (k, b) in buf.iter().enumerate() {
                    data[base + k * stride + i] = *b;
                }
            }
        }
    }

    /// Multiplicity of each half-spectrum bin in the full spectrum: 1 for
    /// the zero and Nyquist bins of the last axis, 2 otherwise.
    pub fn hermitian_weights(&self) -> Vec<f64> {
        let half = *self.half_dims.last().unwrap();
        let mut row = vec![2.0; half];
        row[0] = 1.0;
        row[half - 1] = 1.0;
        let rows = self.complex_len() / half;
        (0..rows).flat_map(|_| row.iter().copied()).collect()
    }
}

/// Signed wavenumber for `index` on an axis of length `n`, in `[-n/2, n/2)`.
pub fn signed_wavenumber(index: usize, n: usize) -> i64 {
    if index < n / 2 {
        index as i64
    } else {
        index as i64 - n as i64
    }
}
