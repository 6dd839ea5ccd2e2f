//! Central finite-difference verification of [`super::loss_and_gradients`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{Param, ParameterSet};
use super::{batch_loss, loss_and_gradients, Dims, Example, ModelOptions};
use crate::error::Result;

pub const FD_STEP: f64 = 1e-4;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct TensorError {
    pub param: Param,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)`, norms over the tensor.
    pub rel_error: f64,
    pub analytic_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub tensors: Vec<TensorError>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&TensorError> {
        self.tensors.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Random parameters (initialization plus a uniform perturbation so that
/// biases and `z_init` are nonzero) and a batch of random chunks.
pub fn random_instance(dims: Dims, intervals: usize, batch: usize, seed: u64) -> (ParameterSet, Vec<Example>) {
    let mut params = ParameterSet::init(dims, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for (_, t) in params.iter_mut() {
        t.data.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
    }
    let mut rows = |n: usize| -> Vec<Vec<f64>> {
        (0..intervals).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
    };
    let examples = (0..batch)
        .map(|i| Example { id: format!("rand-{i}"), x: rows(dims.n_pp), y: rows(dims.n_rr) })
        .collect();
    (params, examples)
}

/// Compares analytic gradients with central differences for every element
/// of every parameter tensor.
pub fn check_gradients(
    params: &ParameterSet,
    batch: &[Example],
    beta: f64,
    opts: &ModelOptions,
    seed: u64,
    step: f64,
) -> Result<GradCheckReport> {
    let refs: Vec<&Example> = batch.iter().collect();
    let (loss, analytic) = loss_and_gradients(&refs, params, beta, opts, seed)?;
    let mut probe = params.clone();
    let mut tensors = Vec::with_capacity(Param::ALL.len());
    for &p in Param::ALL {
        let n = params.get(p).data.len();
        let mut numeric = vec![0.0; n];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = params.get(p).data[i];
            probe.get_mut(p).data[i] = orig + step;
            let up = batch_loss(&refs, &probe, beta, opts, seed)?;
            probe.get_mut(p).data[i] = orig - step;
            let down = batch_loss(&refs, &probe, beta, opts, seed)?;
            probe.get_mut(p).data[i] = orig;
            *slot = (up - down) / (2.0 * step);
        }
        let a = &analytic.get(p).data;
        let diff = a.iter().zip(&numeric).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nn = numeric.iter().map(|x| x * x).sum::<f64>().sqrt();
        let denom = na.max(nn);
        let rel_error = if denom > 0.0 { diff / denom } else { 0.0 };
        tensors.push(TensorError { param: p, rel_error, analytic_norm: na });
    }
    let max_rel_error = tensors.iter().map(|t| t.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { loss, tensors, max_rel_error })
}

/// The standard check: tiny dimensions, `T = 3`, two chunks, `beta = 0.5`.
pub fn standard_check(seed: u64, opts: &ModelOptions) -> Result<GradCheckReport> {
    let (params, batch) = random_instance(Dims::tiny(), 3, 2, seed);
    check_gradients(&params, &batch, 0.5, opts, seed, FD_STEP)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiny_model_gradients_match() {
        let report = standard_check(7, &ModelOptions::default()).unwrap();
        assert!(report.max_rel_error < TOLERANCE, "{:?}", report.worst());
    }

    #[test]
    fn strict_posterior_gradients_match() {
        let opts = ModelOptions { strict_posterior: true, ..ModelOptions::default() };
        let report = standard_check(11, &opts).unwrap();
        assert!(report.max_rel_error < TOLERANCE, "{:?}", report.worst());
    }
}
