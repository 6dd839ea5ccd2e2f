use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use super::{NoiseSpec, Waveform};
use crate::error::{Error, Result};

/// Adds baseline-wander sinusoids (random phase each) and i.i.d. Gaussian
/// noise. Phases are drawn first, in component order, then one Gaussian per
/// sample; the result is a pure function of `(w, spec, seed)`.
pub fn add_noise(w: &Waveform, spec: &NoiseSpec, seed: u64) -> Result<Waveform> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases: Vec<f64> = spec.baseline_components.iter().map(|_| rng.random::<f64>() * TAU).collect();
    let gauss = if spec.gaussian_std > 0.0 {
        Some(Normal::new(0.0, spec.gaussian_std).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let fs = w.sample_rate_hz();
    let out = w
        .samples()
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let t = i as f64 / fs;
            let wander: f64 = spec
                .baseline_components
                .iter()
                .zip(&phases)
                .map(|(&(a, f), &phi)| a * (TAU * f * t + phi).sin())
                .sum();
            let white = gauss.map_or(0.0, |g| rng.sample(g));
            x + wander + white
        })
        .collect();
    w.with_samples(out)
}
