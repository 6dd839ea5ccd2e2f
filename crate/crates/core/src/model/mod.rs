//! The attention-based deep state-space model.
//!
//! Generative side: an additive-attention context over the embedded PP
//! intervals feeds a gated Gaussian transition; each latent state emits one
//! RR interval through a two-hidden-layer network with identity covariance.
//! Inference side: a bidirectional GRU over the RR intervals, combined with
//! the previous latent state, parameterizes a diagonal Gaussian posterior.
//! Everything is evaluated on a [`tape::Tape`], so the ELBO gradients are
//! exact (up to floating point) for every parameter tensor.

pub mod checkpoint;
pub mod gradcheck;
mod network;
pub mod params;
pub mod tape;

pub use params::{Group, Param, ParameterSet, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, hash_str};
use network::Graph;

/// Layer widths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_pp: usize,
    pub n_rr: usize,
    pub latent: usize,
    pub hidden: usize,
    pub attn_hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self { n_pp: 90, n_rr: 90, latent: 128, hidden: 256, attn_hidden: 128 }
    }
}

impl Dims {
    /// The small configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self { n_pp: 90, n_rr: 90, latent: 4, hidden: 6, attn_hidden: 5 }
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_pp, self.n_rr, self.latent, self.hidden, self.attn_hidden].contains(&0) {
            return Err(Error::InvalidArgument(format!("all dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

/// Evaluation knobs that are not trainable parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    /// Added after the softplus of every prior and posterior variance.
    pub var_floor: f64,
    /// Rerun the forward GRU over `y[t..]` for every step instead of one
    /// pass over the whole sequence. Quadratic in `T`.
    pub strict_posterior: bool,
    /// Multiplier on reparameterization noise; 0 turns sampled paths into mean paths.
    pub noise_scale: f64,
    /// Worker threads for batch gradients. Results are reduced in chunk order.
    pub threads: usize,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { var_floor: 1e-4, strict_posterior: false, noise_scale: 1.0, threads: 1 }
    }
}

/// Per-step latent Gaussians and samples for one chunk.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LatentPath {
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    pub samples: Vec<Vec<f64>>,
    /// Attention context used by the prior at each step (empty for a bare posterior pass).
    pub context: Vec<Vec<f64>>,
    /// Row `t` holds the attention weights over the `T` inputs at step `t`.
    pub attention: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElboBreakdown {
    pub reconstruction: f64,
    pub kl_terms: Vec<f64>,
    pub beta: f64,
    pub total: f64,
}

/// One aligned chunk: PP interval rows `x` and RR interval rows `y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub x: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

fn check_rows(rows: &[Vec<f64>], width: usize, what: &str) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::Shape(format!("{what}: need at least one interval")));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != width) {
        return Err(Error::Shape(format!("{what}: row of length {} (expected {width})", r.len())));
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

fn check_vec(v: &[f64], width: usize, what: &str) -> Result<()> {
    if v.len() != width {
        return Err(Error::Shape(format!("{what}: length {} (expected {width})", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    Ok(())
}

/// Sum over dimensions of `KL(N(mq, vq) || N(mp, vp))`; no validation.
pub(crate) fn kl_terms(mq: &[f64], vq: &[f64], mp: &[f64], vp: &[f64]) -> f64 {
    mq.iter()
        .zip(vq)
        .zip(mp.iter().zip(vp))
        .map(|((&a, &b), (&c, &d))| 0.5 * (d / b).ln() + (b + (a - c) * (a - c)) / (2.0 * d) - 0.5)
        .sum()
}

/// KL divergence between diagonal Gaussians given means and variances.
pub fn kl_diag_gaussians(mu_q: &[f64], var_q: &[f64], mu_p: &[f64], var_p: &[f64]) -> Result<f64> {
    let n = mu_q.len();
    if var_q.len() != n || mu_p.len() != n || var_p.len() != n {
        return Err(Error::Shape("KL arguments must have equal lengths".into()));
    }
    if var_q.iter().chain(var_p).any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidArgument("variances must be positive".into()));
    }
    Ok(kl_terms(mu_q, var_q, mu_p, var_p))
}

/// Context vector and attention weights for one step.
pub fn attend(z_prev: &[f64], x: &[Vec<f64>], params: &ParameterSet) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = params.dims();
    check_vec(z_prev, d.latent, "z_prev")?;
    check_rows(x, d.n_pp, "x")?;
    let mut g = Graph::new(params, ModelOptions::default());
    let inputs = g.embed_inputs(x);
    let z = g.tape.leaf(z_prev.to_vec());
    let (c, alpha) = g.attend(z, &inputs);
    Ok((g.tape.value(c).to_vec(), g.tape.value(alpha).to_vec()))
}

/// Prior mean and variance of the next latent state.
pub fn transition(z: &[f64], c: &[f64], params: &ParameterSet, opts: &ModelOptions) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = params.dims();
    check_vec(z, d.latent, "z")?;
    check_vec(c, d.latent, "context")?;
    let mut g = Graph::new(params, *opts);
    let (zv, cv) = (g.tape.leaf(z.to_vec()), g.tape.leaf(c.to_vec()));
    let (mu, var) = g.transition(zv, cv);
    Ok((g.tape.value(mu).to_vec(), g.tape.value(var).to_vec()))
}

/// Emission mean for one latent state.
pub fn emit(z: &[f64], params: &ParameterSet) -> Result<Vec<f64>> {
    check_vec(z, params.dims().latent, "z")?;
    let mut g = Graph::new(params, ModelOptions::default());
    let zv = g.tape.leaf(z.to_vec());
    let mu = g.emit(zv);
    Ok(g.tape.value(mu).to_vec())
}

/// Samples a latent path from the posterior given the RR intervals only.
///
/// Noise is drawn from `ChaCha8Rng::seed_from_u64(seed)` as `T * latent`
/// standard normals, step-major.
pub fn posterior_path(y: &[Vec<f64>], params: &ParameterSet, opts: &ModelOptions, seed: u64) -> Result<LatentPath> {
    check_rows(y, params.dims().n_rr, "y")?;
    let mut g = Graph::new(params, *opts);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let steps = g.posterior(y, &mut rng);
    let t = &g.tape;
    Ok(LatentPath {
        means: steps.iter().map(|s| t.value(s.mu).to_vec()).collect(),
        variances: steps.iter().map(|s| t.value(s.var).to_vec()).collect(),
        samples: steps.iter().map(|s| t.value(s.z).to_vec()).collect(),
        context: Vec::new(),
        attention: Vec::new(),
    })
}

fn check_pair(x: &[Vec<f64>], y: &[Vec<f64>], d: &Dims) -> Result<()> {
    check_rows(x, d.n_pp, "x")?;
    check_rows(y, d.n_rr, "y")?;
    if x.len() != y.len() {
        return Err(Error::Shape(format!("x has {} intervals but y has {}", x.len(), y.len())));
    }
    Ok(())
}

/// Single-sample reparameterized evidence lower bound for one chunk.
pub fn elbo(x: &[Vec<f64>], y: &[Vec<f64>], params: &ParameterSet, beta: f64, opts: &ModelOptions, seed: u64) -> Result<ElboBreakdown> {
    elbo_with_path(x, y, params, beta, opts, seed).map(|(b, _)| b)
}

pub fn elbo_with_path(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    params: &ParameterSet,
    beta: f64,
    opts: &ModelOptions,
    seed: u64,
) -> Result<(ElboBreakdown, LatentPath)> {
    check_pair(x, y, params.dims())?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    let mut g = Graph::new(params, *opts);
    let nodes = g.elbo(x, y, beta, seed);
    let t = &g.tape;
    let breakdown = ElboBreakdown {
        reconstruction: t.scalar(nodes.reconstruction),
        kl_terms: nodes.kl.iter().map(|&k| t.scalar(k)).collect(),
        beta,
        total: t.scalar(nodes.total),
    };
    let path = LatentPath {
        means: nodes.posterior.iter().map(|s| t.value(s.mu).to_vec()).collect(),
        variances: nodes.posterior.iter().map(|s| t.value(s.var).to_vec()).collect(),
        samples: nodes.posterior.iter().map(|s| t.value(s.z).to_vec()).collect(),
        context: nodes.context.iter().map(|&c| t.value(c).to_vec()).collect(),
        attention: nodes.attention.iter().map(|&a| t.value(a).to_vec()).collect(),
    };
    Ok((breakdown, path))
}

/// Seed used for one example's reparameterization noise within a batch.
pub fn example_seed(batch_seed: u64, id: &str) -> u64 {
    derive_seed(batch_seed, hash_str(id))
}

fn accumulate_group(
    batch: &[&Example],
    params: &ParameterSet,
    beta: f64,
    opts: &ModelOptions,
    seed: u64,
    scale: f64,
) -> Result<(f64, ParameterSet)> {
    let mut grads = ParameterSet::zeros(*params.dims());
    let mut loss = 0.0;
    for ex in batch {
        let mut g = Graph::new(params, *opts);
        let nodes = g.elbo(&ex.x, &ex.y, beta, example_seed(seed, &ex.id));
        let total = g.tape.scalar(nodes.total);
        if !total.is_finite() {
            return Err(Error::NonFiniteLoss { chunk_id: ex.id.clone() });
        }
        loss -= total * scale;
        g.tape.backward(nodes.total, -scale, &mut grads);
    }
    Ok((loss, grads))
}

/// Negative mean ELBO over `batch` and its exact gradient with respect to
/// every parameter. Each example's noise seed depends only on `(seed, id)`.
pub fn loss_and_gradients(
    batch: &[&Example],
    params: &ParameterSet,
    beta: f64,
    opts: &ModelOptions,
    seed: u64,
) -> Result<(f64, ParameterSet)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::InvalidArgument(format!("beta must lie in [0, 1], got {beta}")));
    }
    for ex in batch {
        check_pair(&ex.x, &ex.y, params.dims()).map_err(|e| Error::Shape(format!("{}: {e}", ex.id)))?;
    }
    let scale = 1.0 / batch.len() as f64;
    let threads = opts.threads.max(1).min(batch.len());
    if threads == 1 {
        return accumulate_group(batch, params, beta, opts, seed, scale);
    }
    let per_group = batch.len().div_ceil(threads);
    let parts: Vec<Result<(f64, ParameterSet)>> = batch
        .par_chunks(per_group)
        .map(|group| accumulate_group(group, params, beta, opts, seed, scale))
        .collect();
    let mut loss = 0.0;
    let mut grads = ParameterSet::zeros(*params.dims());
    for part in parts {
        let (l, g) = part?;
        loss += l;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// Negative mean ELBO without gradients.
pub fn batch_loss(batch: &[&Example], params: &ParameterSet, beta: f64, opts: &ModelOptions, seed: u64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut loss = 0.0;
    for ex in batch {
        let e = elbo(&ex.x, &ex.y, params, beta, opts, example_seed(seed, &ex.id))?;
        if !e.total.is_finite() {
            return Err(Error::NonFiniteLoss { chunk_id: ex.id.clone() });
        }
        loss -= e.total;
    }
    Ok(loss / batch.len() as f64)
}

/// Prior rollout used for generation: per step, the attention weights, the
/// prior Gaussian, the latent state and its emission.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub attention: Vec<Vec<f64>>,
    pub prior_means: Vec<Vec<f64>>,
    pub prior_variances: Vec<Vec<f64>>,
    pub latents: Vec<Vec<f64>>,
    pub emissions: Vec<Vec<f64>>,
}

/// Runs the prior transition from `z_init` over the PP intervals `x`. With
/// `noise = None` every state is the prior mean; otherwise states are drawn
/// from the prior (scaled by `opts.noise_scale`).
pub fn prior_rollout(x: &[Vec<f64>], params: &ParameterSet, opts: &ModelOptions, noise: Option<u64>) -> Result<Rollout> {
    check_rows(x, params.dims().n_pp, "x")?;
    let mut g = Graph::new(params, *opts);
    let mut rng = noise.map(ChaCha8Rng::seed_from_u64);
    let steps = g.prior_rollout(x, rng.as_mut());
    let t = &g.tape;
    Ok(Rollout {
        attention: steps.iter().map(|s| t.value(s.alpha).to_vec()).collect(),
        prior_means: steps.iter().map(|s| t.value(s.mu).to_vec()).collect(),
        prior_variances: steps.iter().map(|s| t.value(s.var).to_vec()).collect(),
        latents: steps.iter().map(|s| t.value(s.z).to_vec()).collect(),
        emissions: steps.iter().map(|s| t.value(s.emission).to_vec()).collect(),
    })
}
