//! Flat `key = value` run configuration.
//!
//! Lines are `key = value`; `#` starts a comment; blank lines are ignored.
//! Values given on the command line override the file, which overrides the
//! built-in defaults.

use std::fmt;
use std::path::Path;

use adssm::dataset::{PreprocessConfig, SplitSpec};
use adssm::model::{Dims, ModelOptions};
use adssm::training::{Schedule, TrainConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub anneal_end_epoch: usize,
    pub checkpoint_every: usize,
    pub grad_clip: f64,
    pub hidden: usize,
    pub latent: usize,
    pub attn_hidden: usize,
    pub interval_len: usize,
    pub chunk_seconds: f64,
    pub sample_rate_hz: f64,
    pub threads: usize,
    pub var_floor: f64,
    pub strict_posterior: bool,
    pub train_seconds: f64,
    pub val_seconds: f64,
    pub min_bpm: f64,
    pub max_bpm: f64,
    pub noise_on_ecg: bool,
    pub record_wall_clock: bool,
}

impl Default for Config {
    fn default() -> Self {
        let sched = Schedule::default();
        let dims = Dims::default();
        let model = ModelOptions::default();
        let pre = PreprocessConfig::default();
        let split = SplitSpec::default();
        Self {
            seed: 0,
            lr: adssm::training::DEFAULT_LR,
            batch_size: sched.batch_size,
            epochs: sched.total_epochs,
            anneal_end_epoch: sched.anneal_end_epoch,
            checkpoint_every: sched.checkpoint_every,
            grad_clip: sched.grad_clip,
            hidden: dims.hidden,
            latent: dims.latent,
            attn_hidden: dims.attn_hidden,
            interval_len: dims.n_pp,
            chunk_seconds: pre.chunk_seconds,
            sample_rate_hz: adssm::signals::SAMPLE_RATE_HZ,
            threads: model.threads,
            var_floor: model.var_floor,
            strict_posterior: model.strict_posterior,
            train_seconds: split.train_s,
            val_seconds: split.val_s,
            min_bpm: pre.min_bpm,
            max_bpm: pre.max_bpm,
            noise_on_ecg: pre.noise_on_ecg,
            record_wall_clock: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "seed",
    "lr",
    "batch_size",
    "epochs",
    "anneal_end_epoch",
    "checkpoint_every",
    "grad_clip",
    "hidden",
    "latent",
    "attn_hidden",
    "interval_len",
    "chunk_seconds",
    "sample_rate_hz",
    "threads",
    "var_floor",
    "strict_posterior",
    "train_seconds",
    "val_seconds",
    "min_bpm",
    "max_bpm",
    "noise_on_ecg",
    "record_wall_clock",
];

#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    UnknownKey(String),
    BadValue { key: String, value: String },
    Malformed { line: usize, text: String },
    AtLine { line: usize, inner: Box<ConfigError> },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::UnknownKey(k) => write!(f, "unknown config key {k:?}; valid keys: {}", KEYS.join(", ")),
            ConfigError::BadValue { key, value } => write!(f, "invalid value {value:?} for {key}"),
            ConfigError::Malformed { line, text } => write!(f, "line {line}: expected `key = value`, found {text:?}"),
            ConfigError::AtLine { line, inner } => write!(f, "line {line}: {inner}"),
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
}

impl Config {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let v = value.trim();
        match key.trim() {
            "seed" => self.seed = parse(key, v)?,
            "lr" => self.lr = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "anneal_end_epoch" => self.anneal_end_epoch = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "grad_clip" => self.grad_clip = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "latent" => self.latent = parse(key, v)?,
            "attn_hidden" => self.attn_hidden = parse(key, v)?,
            "interval_len" => self.interval_len = parse(key, v)?,
            "chunk_seconds" => self.chunk_seconds = parse(key, v)?,
            "sample_rate_hz" => self.sample_rate_hz = parse(key, v)?,
            "threads" => self.threads = parse(key, v)?,
            "var_floor" => self.var_floor = parse(key, v)?,
            "strict_posterior" => self.strict_posterior = parse(key, v)?,
            "train_seconds" => self.train_seconds = parse(key, v)?,
            "val_seconds" => self.val_seconds = parse(key, v)?,
            "min_bpm" => self.min_bpm = parse(key, v)?,
            "max_bpm" => self.max_bpm = parse(key, v)?,
            "noise_on_ecg" => self.noise_on_ecg = parse(key, v)?,
            "record_wall_clock" => self.record_wall_clock = parse(key, v)?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "seed" => self.seed.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "anneal_end_epoch" => self.anneal_end_epoch.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "grad_clip" => self.grad_clip.to_string(),
            "hidden" => self.hidden.to_string(),
            "latent" => self.latent.to_string(),
            "attn_hidden" => self.attn_hidden.to_string(),
            "interval_len" => self.interval_len.to_string(),
            "chunk_seconds" => self.chunk_seconds.to_string(),
            "sample_rate_hz" => self.sample_rate_hz.to_string(),
            "threads" => self.threads.to_string(),
            "var_floor" => self.var_floor.to_string(),
            "strict_posterior" => self.strict_posterior.to_string(),
            "train_seconds" => self.train_seconds.to_string(),
            "val_seconds" => self.val_seconds.to_string(),
            "min_bpm" => self.min_bpm.to_string(),
            "max_bpm" => self.max_bpm.to_string(),
            "noise_on_ecg" => self.noise_on_ecg.to_string(),
            "record_wall_clock" => self.record_wall_clock.to_string(),
            _ => return None,
        })
    }

    /// Applies the lines of a config file on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<(), ConfigError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .filter(|(k, v)| !k.trim().is_empty() && !v.trim().is_empty())
                .ok_or_else(|| ConfigError::Malformed { line: i + 1, text: raw.to_string() })?;
            self.set(key, value).map_err(|e| ConfigError::AtLine { line: i + 1, inner: Box::new(e) })?;
        }
        Ok(())
    }

    /// `key=value` pairs in a fixed order, for logging.
    pub fn resolved(&self) -> String {
        KEYS.iter().map(|k| format!("{k}={}", self.get(k).unwrap_or_default())).collect::<Vec<_>>().join(" ")
    }

    pub fn dims(&self) -> Dims {
        Dims { n_pp: self.interval_len, n_rr: self.interval_len, latent: self.latent, hidden: self.hidden, attn_hidden: self.attn_hidden }
    }

    pub fn model_options(&self) -> ModelOptions {
        ModelOptions { var_floor: self.var_floor, strict_posterior: self.strict_posterior, threads: self.threads, ..ModelOptions::default() }
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig {
            chunk_seconds: self.chunk_seconds,
            interval_len: self.interval_len,
            min_bpm: self.min_bpm,
            max_bpm: self.max_bpm,
            noise_on_ecg: self.noise_on_ecg,
            noise_seed: self.seed,
            ..PreprocessConfig::default()
        }
    }

    pub fn split(&self) -> SplitSpec {
        SplitSpec { train_s: self.train_seconds, val_s: self.val_seconds }
    }

    pub fn train_config(&self, checkpoint_dir: &Path) -> TrainConfig {
        TrainConfig {
            schedule: Schedule {
                total_epochs: self.epochs,
                batch_size: self.batch_size,
                anneal_end_epoch: self.anneal_end_epoch,
                checkpoint_every: self.checkpoint_every,
                grad_clip: self.grad_clip,
                fixed_beta: None,
            },
            model: self.model_options(),
            dims: self.dims(),
            lr: self.lr,
            seed: self.seed,
            checkpoint_dir: Some(checkpoint_dir.to_path_buf()),
            record_wall_clock: self.record_wall_clock,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let mut c = Config::default();
        c.apply_text("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!((c.lr, c.batch_size, c.epochs, c.anneal_end_epoch), (0.0008, 128, 5000, 1250));
        assert_eq!((c.hidden, c.latent, c.interval_len), (256, 128, 90));
        assert_eq!((c.chunk_seconds, c.sample_rate_hz, c.threads), (4.0, 125.0, 1));
    }

    #[test]
    fn comments_and_spacing() {
        let mut c = Config::default();
        c.apply_text("# run\n\n  epochs = 50  # short\nstrict_posterior=true\n").unwrap();
        assert_eq!(c.epochs, 50);
        assert!(c.strict_posterior);
    }

    #[test]
    fn malformed_line_reports_its_number() {
        let mut c = Config::default();
        let e = c.apply_text("epochs = 5\nthis is wrong\n").unwrap_err();
        assert_eq!(e, ConfigError::Malformed { line: 2, text: "this is wrong".into() });
        assert!(e.to_string().starts_with("line 2"));
        let e = c.apply_text("\n\nlr = fast").unwrap_err();
        assert!(e.to_string().starts_with("line 3"), "{e}");
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let e = Config::default().apply_text("learning_rate = 0.1").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("learning_rate") && msg.contains("batch_size") && msg.contains("anneal_end_epoch"), "{msg}");
    }

    #[test]
    fn every_key_round_trips() {
        let c = Config::default();
        let mut d = Config { seed: 99, ..Config::default() };
        for k in KEYS {
            d.set(k, &c.get(k).unwrap()).unwrap();
        }
        assert_eq!(c, d);
        assert!(c.resolved().contains("lr=0.0008"));
    }
}
