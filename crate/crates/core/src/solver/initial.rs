use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{fft_forward, fft_inverse, Field, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialConditionKind {
    /// i.i.d. uniform values at every grid point.
    UniformPointwise,
    /// Uniform pointwise noise with every mode `|κ| > κ_c` removed, then
    /// rescaled affinely onto the amplitude range.
    LowwaveTruncated,
}

/// Random initial condition recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitialConditionSpec {
    pub kind: InitialConditionKind,
    pub lo: f64,
    pub hi: f64,
    /// Wave-number cutoff; only used by `LowwaveTruncated`.
    #[serde(default = "default_cutoff")]
    pub cutoff: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_cutoff() -> f64 {
    8.0
}

impl InitialConditionSpec {
    pub fn uniform(lo: f64, hi: f64, seed: u64) -> Self {
        InitialConditionSpec { kind: InitialConditionKind::UniformPointwise, lo, hi, cutoff: 8.0, seed }
    }

    pub fn lowwave(lo: f64, hi: f64, cutoff: f64, seed: u64) -> Self {
        InitialConditionSpec { kind: InitialConditionKind::LowwaveTruncated, lo, hi, cutoff, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lo <= self.hi) || !self.lo.is_finite() || !self.hi.is_finite() {
            return Err(Error::config(format!(
                "initial condition range [{}, {}] is invalid",
                self.lo, self.hi
            )));
        }
        if self.kind == InitialConditionKind::LowwaveTruncated && !(self.cutoff >= 1.0) {
            return Err(Error::config(format!("wave cutoff must be >= 1, got {}", self.cutoff)));
        }
        Ok(())
    }
}

/// Draws one initial field according to `spec`.
pub fn sample_initial_condition(spec: &InitialConditionSpec, grid: Grid) -> Result<Field> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise: Vec<f64> = (0..grid.len())
        .map(|_| if spec.hi > spec.lo { rng.gen_range(spec.lo..=spec.hi) } else { spec.lo })
        .collect();
    let field = Field::new(grid, 1, noise)?;
    match spec.kind {
        InitialConditionKind::UniformPointwise => Ok(field),
        InitialConditionKind::LowwaveTruncated => {
            let mut s = fft_forward(&field);
            s.apply(|m| {
                if m.norm() > spec.cutoff {
                    Complex64::new(0.0, 0.0)
                } else {
                    Complex64::new(1.0, 0.0)
                }
            });
            let smooth = fft_inverse(&s);
            let (min, max) = smooth
                .values()
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            let values = if max - min > 0.0 {
                let scale = (spec.hi - spec.lo) / (max - min);
                smooth.values().iter().map(|v| spec.lo + (v - min) * scale).collect()
            } else {
                vec![0.5 * (spec.lo + spec.hi); grid.len()]
            };
            Field::new(grid, 1, values)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_stays_in_range() {
        let g = Grid::new(1, 256).unwrap();
        let f = sample_initial_condition(&InitialConditionSpec::uniform(0.0, 0.03, 1), g).unwrap();
        assert!(f.values().iter().all(|&v| (0.0..=0.03).contains(&v)));
        assert!(f.max_abs() > 0.02);
    }

    #[test]
    fn lowwave_spectrum_is_truncated() {
        let g = Grid::new(2, 32).unwrap();
        let f = sample_initial_condition(&InitialConditionSpec::lowwave(0.0, 0.03, 8.0, 4), g).unwrap();
        assert!(f.values().iter().all(|&v| (-1e-15..=0.03 + 1e-15).contains(&v)));
        let s = fft_forward(&f);
        for (m, c) in g.half_modes().iter().zip(s.coeffs()) {
            if m.norm() > 8.0 {
                assert!(c.norm() < 1e-12, "mode {:?} = {c}", m.k);
            }
        }
    }

    #[test]
    fn seeds_are_deterministic() {
        let g = Grid::new(1, 64).unwrap();
        let spec = InitialConditionSpec::uniform(-1.0, 1.0, 42);
        let a = sample_initial_condition(&spec, g).unwrap();
        let b = sample_initial_condition(&spec, g).unwrap();
        assert_eq!(a, b);
        let c = sample_initial_condition(&InitialConditionSpec { seed: 43, ..spec }, g).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(InitialConditionSpec::uniform(1.0, 0.0, 0).validate().is_err());
        assert!(InitialConditionSpec::lowwave(0.0, 1.0, 0.5, 0).validate().is_err());
    }
}
