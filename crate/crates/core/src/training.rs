//! Adam optimization of the negative ELBO with linear KL annealing,
//! bucketed mini-batches, checkpointing and exact resume.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::checkpoint::{load_tensors, params_from_named, params_to_named, save_tensors, NamedTensor};
use crate::model::{batch_loss, loss_and_gradients, Dims, Example, ModelOptions, ParameterSet};
use crate::seed::derive_seed;

pub const DEFAULT_LR: f64 = 0.0008;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

const SHUFFLE_SALT: u64 = 0x5348_5546;
const BATCH_SALT: u64 = 0x4241_5443;
const VAL_SALT: u64 = 0x5641_4c49;

/// Adam moment accumulators and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(dims: Dims) -> Self {
        Self::with_lr(dims, DEFAULT_LR)
    }

    pub fn with_lr(dims: Dims, lr: f64) -> Self {
        Self {
            m: ParameterSet::zeros(dims),
            v: ParameterSet::zeros(dims),
            step: 0,
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps: DEFAULT_EPS,
        }
    }
}

/// One bias-corrected Adam update, applied in place.
pub fn adam_step(params: &mut ParameterSet, grads: &ParameterSet, opt: &mut OptimizerState) -> Result<()> {
    if !params.same_shape(grads) || !params.same_shape(&opt.m) || !params.same_shape(&opt.v) {
        return Err(Error::Shape("parameters, gradients and moments must share a shape".into()));
    }
    if let Some(p) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient(p.name().to_string()));
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let (b1, b2, lr, eps) = (opt.beta1, opt.beta2, opt.lr, opt.eps);
    let moments = opt.m.iter_mut().zip(opt.v.iter_mut());
    for (((_, w), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        for i in 0..w.data.len() {
            let gi = g.data[i];
            m.data[i] = b1 * m.data[i] + (1.0 - b1) * gi;
            v.data[i] = b2 * v.data[i] + (1.0 - b2) * gi * gi;
            let m_hat = m.data[i] / c1;
            let v_hat = v.data[i] / c2;
            w.data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub total_epochs: usize,
    pub batch_size: usize,
    pub anneal_end_epoch: usize,
    /// Write `latest.ckpt` after every this many epochs.
    pub checkpoint_every: usize,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    /// Overrides the annealing ramp when set.
    pub fixed_beta: Option<f64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self { total_epochs: 5000, batch_size: 128, anneal_end_epoch: 1250, checkpoint_every: 50, grad_clip: 10.0, fixed_beta: None }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::InvalidArgument("batch_size and checkpoint_every must be positive".into()));
        }
        if self.anneal_end_epoch > self.total_epochs {
            return Err(Error::InvalidArgument(format!(
                "anneal_end_epoch {} exceeds total_epochs {}",
                self.anneal_end_epoch, self.total_epochs
            )));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::InvalidArgument("grad_clip must be positive".into()));
        }
        if let Some(b) = self.fixed_beta {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidArgument(format!("fixed_beta must lie in [0, 1], got {b}")));
            }
        }
        Ok(())
    }
}

/// KL weight for `epoch`: `min(1, epoch / anneal_end_epoch)`, or the fixed
/// value when the schedule pins one. An `anneal_end_epoch` of 0 means no ramp.
pub fn beta_at(epoch: usize, sched: &Schedule) -> f64 {
    if let Some(b) = sched.fixed_beta {
        return b;
    }
    if sched.anneal_end_epoch == 0 {
        return 1.0;
    }
    (epoch as f64 / sched.anneal_end_epoch as f64).min(1.0)
}

/// One row of the metrics log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub beta: f64,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_clock_s: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: ParameterSet,
    pub opt: OptimizerState,
    /// Number of completed epochs.
    pub epoch: usize,
    /// KL weight used in the last completed epoch.
    pub beta: f64,
    pub seed: u64,
    pub best_val: f64,
    /// Records of the epochs run by this process.
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn fresh(dims: Dims, seed: u64, lr: f64) -> Result<Self> {
        dims.validate()?;
        Ok(Self {
            params: ParameterSet::init(dims, seed),
            opt: OptimizerState::with_lr(dims, lr),
            epoch: 0,
            beta: 0.0,
            seed,
            best_val: f64::INFINITY,
            history: Vec::new(),
        })
    }

    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        let mut out = params_to_named(&self.params, "");
        out.extend(params_to_named(&self.opt.m, "adam/m/"));
        out.extend(params_to_named(&self.opt.v, "adam/v/"));
        out.push(NamedTensor::scalar("adam/step", self.opt.step as f64));
        out.push(NamedTensor::scalar("adam/lr", self.opt.lr));
        out.push(NamedTensor::scalar("adam/beta1", self.opt.beta1));
        out.push(NamedTensor::scalar("adam/beta2", self.opt.beta2));
        out.push(NamedTensor::scalar("adam/eps", self.opt.eps));
        out.push(NamedTensor::scalar("state/epoch", self.epoch as f64));
        out.push(NamedTensor::scalar("state/beta", self.beta));
        out.push(NamedTensor::scalar("state/seed_hi", (self.seed >> 32) as f64));
        out.push(NamedTensor::scalar("state/seed_lo", (self.seed & 0xffff_ffff) as f64));
        out.push(NamedTensor::scalar("state/best_val", self.best_val));
        out
    }

    pub fn from_tensors(dims: Dims, tensors: &[NamedTensor]) -> Result<Self> {
        let scalar = |name: &str| -> Result<f64> {
            tensors
                .iter()
                .find(|t| t.name == name && t.data.len() == 1)
                .map(|t| t.data[0])
                .ok_or_else(|| Error::Checkpoint(format!("missing scalar {name}")))
        };
        let params = params_from_named(dims, tensors, "")?;
        let opt = OptimizerState {
            m: params_from_named(dims, tensors, "adam/m/")?,
            v: params_from_named(dims, tensors, "adam/v/")?,
            step: scalar("adam/step")? as u64,
            lr: scalar("adam/lr")?,
            beta1: scalar("adam/beta1")?,
            beta2: scalar("adam/beta2")?,
            eps: scalar("adam/eps")?,
        };
        let seed = ((scalar("state/seed_hi")? as u64) << 32) | scalar("state/seed_lo")? as u64;
        Ok(Self {
            params,
            opt,
            epoch: scalar("state/epoch")? as usize,
            beta: scalar("state/beta")?,
            seed,
            best_val: scalar("state/best_val")?,
            history: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_tensors(path, self.params.dims(), &self.to_tensors())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (dims, tensors) = load_tensors(path)?;
        Self::from_tensors(dims, &tensors)
    }
}

/// Training and validation chunks.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainData {
    pub train: Vec<Example>,
    pub val: Vec<Example>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub model: ModelOptions,
    pub dims: Dims,
    pub lr: f64,
    pub seed: u64,
    /// Receives `metrics.csv`, `latest.ckpt` and `best.ckpt`.
    pub checkpoint_dir: Option<PathBuf>,
    /// Log real elapsed time; off by default so logs are reproducible byte for byte.
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            model: ModelOptions::default(),
            dims: Dims::default(),
            lr: DEFAULT_LR,
            seed: 0,
            checkpoint_dir: None,
            record_wall_clock: false,
        }
    }
}

pub const METRICS_HEADER: &str = "epoch,beta,train_loss,val_loss,wall_clock_s";

fn format_record(r: &EpochRecord) -> String {
    let val = r.val_loss.map(|v| format!("{v:?}")).unwrap_or_default();
    format!("{},{:?},{:?},{},{:?}", r.epoch, r.beta, r.train_loss, val, r.wall_clock_s)
}

/// Keeps the log rows for epochs before `keep_before` and returns the
/// remaining file content, header included.
fn truncated_log(path: &Path, keep_before: usize) -> Result<String> {
    let mut out = format!("{METRICS_HEADER}\n");
    if keep_before == 0 || !path.exists() {
        return Ok(out);
    }
    for line in fs::read_to_string(path)?.lines().skip(1) {
        let epoch = line.split(',').next().and_then(|e| e.parse::<usize>().ok());
        if epoch.is_some_and(|e| e < keep_before) {
            out.push_str(line);
            out.push('\n');
        }
    }
    Ok(out)
}

/// Groups example indices by interval count.
fn buckets(data: &[Example]) -> BTreeMap<usize, Vec<usize>> {
    let mut map: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, ex) in data.iter().enumerate() {
        map.entry(ex.x.len()).or_default().push(i);
    }
    map
}

/// Seeded batch plan for one epoch: shuffle inside each bucket, cut into
/// batches, then shuffle the batch order.
pub fn epoch_batches(data: &[Example], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed ^ SHUFFLE_SALT, epoch as u64));
    let mut batches = Vec::new();
    for (t, mut idx) in buckets(data) {
        if t == 0 || idx.is_empty() {
            warn!("skipping empty bucket (T = {t})");
            continue;
        }
        idx.shuffle(&mut rng);
        batches.extend(idx.chunks(batch_size).map(<[usize]>::to_vec));
    }
    batches.shuffle(&mut rng);
    batches
}

/// Mean validation loss at `beta`, one reproducible noise draw per chunk.
pub fn validation_loss(val: &[Example], params: &ParameterSet, beta: f64, opts: &ModelOptions, seed: u64, epoch: usize) -> Result<Option<f64>> {
    if val.is_empty() {
        return Ok(None);
    }
    let refs: Vec<&Example> = val.iter().collect();
    batch_loss(&refs, params, beta, opts, derive_seed(seed ^ VAL_SALT, epoch as u64)).map(Some)
}

/// Runs one epoch and returns the sample-weighted mean training loss.
fn run_epoch(state: &mut TrainState, train: &[Example], cfg: &TrainConfig, beta: f64) -> Result<f64> {
    let epoch = state.epoch;
    let plan = epoch_batches(train, cfg.schedule.batch_size, state.seed, epoch);
    let mut total = 0.0;
    let mut count = 0usize;
    for (b, idx) in plan.iter().enumerate() {
        let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
        let batch_seed = derive_seed(derive_seed(state.seed ^ BATCH_SALT, epoch as u64), b as u64);
        let (loss, mut grads) = loss_and_gradients(&batch, &state.params, beta, &cfg.model, batch_seed)?;
        if let Some(p) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient(format!("{} (epoch {epoch}, batch {b}, loss {loss})", p.name())));
        }
        let norm = grads.global_norm();
        if norm > cfg.schedule.grad_clip {
            grads.scale(cfg.schedule.grad_clip / norm);
        }
        adam_step(&mut state.params, &grads, &mut state.opt)?;
        total += loss * batch.len() as f64;
        count += batch.len();
    }
    if count == 0 {
        return Err(Error::InvalidArgument("no usable training batches".into()));
    }
    Ok(total / count as f64)
}

/// Trains from scratch for `cfg.schedule.total_epochs` epochs.
pub fn train(data: &TrainData, cfg: &TrainConfig) -> Result<TrainState> {
    let state = TrainState::fresh(cfg.dims, cfg.seed, cfg.lr)?;
    continue_training(state, data, cfg, cfg.schedule.total_epochs)
}

/// Continues `state` until `until_epoch` epochs are complete. Starting from
/// a loaded checkpoint reproduces the uninterrupted run exactly.
pub fn continue_training(mut state: TrainState, data: &TrainData, cfg: &TrainConfig, until_epoch: usize) -> Result<TrainState> {
    cfg.schedule.validate()?;
    if data.train.is_empty() {
        return Err(Error::InvalidArgument("empty training set".into()));
    }
    if state.params.dims() != &cfg.dims {
        return Err(Error::Shape(format!("state dims {:?} differ from config dims {:?}", state.params.dims(), cfg.dims)));
    }
    if until_epoch > cfg.schedule.total_epochs {
        return Err(Error::InvalidArgument(format!("until_epoch {until_epoch} exceeds total_epochs {}", cfg.schedule.total_epochs)));
    }
    let mut log = match &cfg.checkpoint_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let path = dir.join("metrics.csv");
            let kept = truncated_log(&path, state.epoch)?;
            fs::write(&path, kept)?;
            Some(fs::OpenOptions::new().append(true).open(&path)?)
        }
        None => None,
    };
    let started = Instant::now();
    while state.epoch < until_epoch {
        let beta = beta_at(state.epoch, &cfg.schedule);
        let train_loss = run_epoch(&mut state, &data.train, cfg, beta)?;
        let val_loss = validation_loss(&data.val, &state.params, beta, &cfg.model, state.seed, state.epoch)?;
        let wall_clock_s = if cfg.record_wall_clock { started.elapsed().as_secs_f64() } else { 0.0 };
        let record = EpochRecord { epoch: state.epoch, beta, train_loss, val_loss, wall_clock_s };
        if let Some(f) = log.as_mut() {
            writeln!(f, "{}", format_record(&record))?;
        }
        info!("epoch {} beta {beta:.4} train {train_loss:.6} val {:?}", state.epoch, val_loss);
        state.history.push(record);
        state.beta = beta;
        state.epoch += 1;
        let selection = val_loss.unwrap_or(train_loss);
        let improved = selection < state.best_val;
        if improved {
            state.best_val = selection;
        }
        if let Some(dir) = &cfg.checkpoint_dir {
            if improved {
                state.save(&dir.join("best.ckpt"))?;
            }
            if state.epoch % cfg.schedule.checkpoint_every == 0 || state.epoch == until_epoch {
                state.save(&dir.join("latest.ckpt"))?;
            }
        }
    }
    Ok(state)
}
