use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ParamVector, Tape, Var};
use crate::error::Result;

/// Outcome of [`gradient_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative discrepancy over the accepted probes.
    pub max_rel_error: f64,
    pub probes_used: usize,
    /// Probes whose ±eps perturbation crossed a ReLU or max-pool kink.
    pub probes_at_kink: usize,
}

/// Compares backward gradients against central differences along random
/// unit directions.
///
/// `build` records the loss for a given parameter vector. A probe is
/// rejected (and counted in `probes_at_kink`) when either perturbed
/// evaluation takes a different discrete branch than the base point;
/// rejected probes are retried with a fresh direction up to `4 * probes`
/// attempts in total.
pub fn gradient_check<F>(build: F, params: &ParamVector, probes: usize, eps: f64, seed: u64) -> Result<GradCheckReport>
where
    F: Fn(&ParamVector) -> Result<(Tape, Var)>,
{
    let (tape, loss) = build(params)?;
    let grad = tape.backward(loss, params.len())?;
    let base_sig = tape.kink_signature();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = GradCheckReport { max_rel_error: 0.0, probes_used: 0, probes_at_kink: 0 };
    let mut attempts = 0;
    while report.probes_used < probes && attempts < 4 * probes.max(1) {
        attempts += 1;
        let mut dir: Vec<f64> = (0..params.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);

        let eval = |sign: f64| -> Result<(f64, u64)> {
            let mut p = params.clone();
            for (v, d) in p.values_mut().iter_mut().zip(&dir) {
                *v += sign * eps * d;
            }
            let (t, l) = build(&p)?;
            Ok((t.scalar(l), t.kink_signature()))
        };
        let (plus, sig_p) = eval(1.0)?;
        let (minus, sig_m) = eval(-1.0)?;
        if sig_p != base_sig || sig_m != base_sig {
            report.probes_at_kink += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let scale = numeric.abs().max(analytic.abs()).max(1e-8);
        report.max_rel_error = report.max_rel_error.max((numeric - analytic).abs() / scale);
        report.probes_used += 1;
    }
    Ok(report)
}
