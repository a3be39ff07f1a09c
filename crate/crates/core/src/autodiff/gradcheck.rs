//! Central finite-difference gradient checks.
//!
//! The scalar being differentiated is `Σ w ⊙ f(inputs)` with a fixed random
//! projection `w`; the numeric side only ever evaluates forward values, so
//! it is independent of every backward rule it checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Graph, Var};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Largest norm-wise relative error over all differentiable inputs:
    /// `‖analytic − numeric‖₂ / max(‖analytic‖₂, ‖numeric‖₂, 1e−12)`.
    pub max_rel_err: f64,
    /// Input index at which `max_rel_err` occurred.
    pub worst_input: usize,
    pub analytic: Vec<Vec<f64>>,
    pub numeric: Vec<Vec<f64>>,
}

fn projected(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

fn forward_value<F>(inputs: &[Tensor], f: &F) -> Result<Vec<f64>>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_finite_checks(false);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    Ok(g.value(out).to_vec())
}

/// Compares the tape's gradients against central differences for every
/// input tensor with `requires_grad` set.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, step: f64, seed: u64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::with_finite_checks(false);
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t)).collect();
    let out = f(&mut g, &vars)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<f64> = (0..g.value(out).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let grads = g.backward_with(out, weights.clone())?;

    let mut report = GradCheck { max_rel_err: 0.0, worst_input: 0, analytic: Vec::new(), numeric: Vec::new() };
    for (idx, input) in inputs.iter().enumerate() {
        if !input.requires_grad {
            report.analytic.push(Vec::new());
            report.numeric.push(Vec::new());
            continue;
        }
        let analytic = grads.get(vars[idx]).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; input.len()]);
        let mut numeric = vec![0.0; input.len()];
        let mut probe: Vec<Tensor> = inputs.to_vec();
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = input.data()[j];
            probe[idx].data_mut()[j] = orig + step;
            let plus = projected(&forward_value(&probe, &f)?, &weights);
            probe[idx].data_mut()[j] = orig - step;
            let minus = projected(&forward_value(&probe, &f)?, &weights);
            probe[idx].data_mut()[j] = orig;
            *slot = (plus - minus) / (2.0 * step);
        }
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
        let rel = diff / na.max(nn).max(1e-12);
        if rel > report.max_rel_err || rel.is_nan() {
            report.max_rel_err = rel;
            report.worst_input = idx;
        }
        report.analytic.push(analytic);
        report.numeric.push(numeric);
    }
    Ok(report)
}

/// Random tensor with entries in `[lo, hi)`, marked as requiring gradients.
pub fn random_param(shape: Vec<usize>, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    Tensor::new(shape, data).expect("shape matches").into_param()
}
