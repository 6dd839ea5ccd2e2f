//! The `adssm` command-line tool.

pub mod config;

use std::fmt;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use adssm::dataset::{preprocess_manifest, preprocess_ppg, preprocess_record, split_chunks, RecordInfo, Splits};
use adssm::metrics::{aggregate, read_records_csv, write_records_csv, write_report_csv, Cohort, MetricRecord};
use adssm::model::checkpoint::load_params;
use adssm::model::gradcheck::{standard_check, TOLERANCE};
use adssm::model::ModelOptions;
use adssm::signals::io::{read_waveform_csv, write_manifest, write_truth_csv, write_waveform_csv, ManifestRecord, RecordLabel};
use adssm::signals::{add_noise, chunk, Channel, NoiseSpec, Waveform};
use adssm::synth::{generate_pair, SubjectProfile};
use adssm::training::{continue_training, TrainData, TrainState};
use adssm::translate::{evaluate_chunk, translate_chunk, uncertainty_band, Mode, TranslateOptions, Units};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;

use config::{Config, ConfigError};

const FORMATS: &str = "\
File formats:
  waveform CSV   header `t_sec,value`, uniformly spaced times (tolerance 1e-6 s)
  manifest CSV   `record_id,subject,label,ppg_path,ecg_path`; label is healthy or afib;
                 paths are relative to the manifest
  peaks CSV      `beat_index,r_time_s,systolic_time_s`
  metrics CSV    `chunk_id,subject,cohort,pearson,rmse_mv,snr_db`
  training log   `epoch,beta,train_loss,val_loss,wall_clock_s`
  config file    one `key = value` per line, `#` comments; keys: seed, lr, batch_size, epochs,
                 anneal_end_epoch, checkpoint_every, grad_clip, hidden, latent, attn_hidden,
                 interval_len, chunk_seconds, sample_rate_hz, threads, var_floor, strict_posterior,
                 train_seconds, val_seconds, min_bpm, max_bpm, noise_on_ecg, record_wall_clock
  checkpoint     binary: magic ADSSMCKP, version, dims, named little-endian f64 tensors

Exit codes: 0 success, 1 runtime failure, 2 usage or config error, 3 missing file, 4 malformed CSV.";

#[derive(Parser, Debug)]
#[command(name = "adssm", version, about = "PPG-to-ECG translation with an attention-based deep state-space model", after_help = FORMATS)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file of `key = value` lines; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Override any config key, e.g. `--set lr=0.001`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic paired PPG/ECG records, ground-truth peaks and a manifest.
    Synth {
        #[arg(long, default_value_t = 4)]
        subjects: usize,
        /// How many of the subjects have AFib.
        #[arg(long, default_value_t = 0)]
        afib: usize,
        /// Record length in seconds.
        #[arg(long, default_value_t = 60.0)]
        duration: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Filter, chunk, segment, align and normalize the records of a manifest
    /// into a JSON file of train/val/test chunks.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Corrupt the PPG with baseline-wander sinusoids and white noise first.
        #[arg(long)]
        noise: bool,
    },
    /// Train on preprocessed chunks; writes metrics.csv, latest.ckpt and best.ckpt.
    Train {
        /// JSON produced by `preprocess`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        threads: Option<usize>,
        /// Continue from a training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Translate a PPG waveform CSV into ECG.
    Translate {
        #[arg(long)]
        ppg: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reference ECG CSV; enables aligned references and per-chunk metrics.
        #[arg(long = "ref")]
        reference: Option<PathBuf>,
        #[arg(long, value_parser = ["mean", "sample"], default_value = "mean")]
        mode: String,
        /// Monte Carlo draws in sample mode.
        #[arg(long, default_value_t = 100)]
        draws: usize,
        #[arg(long, value_parser = ["healthy", "afib", "noisy"], default_value = "healthy")]
        cohort: String,
    },
    /// Compare predicted and reference waveforms per chunk, or aggregate a metrics CSV.
    Evaluate {
        #[arg(long, requires = "reference", conflicts_with = "records")]
        pred: Option<PathBuf>,
        #[arg(long = "ref", requires = "pred")]
        reference: Option<PathBuf>,
        /// Existing per-chunk metrics CSV to aggregate.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, value_parser = ["healthy", "afib", "noisy"], default_value = "healthy")]
        cohort: String,
        /// Write per-chunk rows here and the aggregate next to it (`*.report.csv`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Add baseline wander and white noise to a waveform CSV.
    Noise {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// White-noise standard deviation.
        #[arg(long, default_value_t = 0.3)]
        std: f64,
        /// Sinusoids as `amplitude:frequency_hz`, comma separated.
        #[arg(long, default_value = "0.3:0.3,0.4:0.2,0.1:0.9")]
        components: String,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        /// Use the per-step forward recurrence in the posterior.
        #[arg(long)]
        strict: bool,
    },
}

#[derive(Parser, Debug)]
#[command(name = "adssm", version, about, after_help = FORMATS)]
struct Root {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    MissingFile(String),
    MalformedCsv(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Runtime(_) => 1,
            CliError::Usage(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::MalformedCsv(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Runtime(_) => "runtime",
            CliError::Usage(_) => "usage",
            CliError::MissingFile(_) => "missing_file",
            CliError::MalformedCsv(_) => "malformed_csv",
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::MissingFile(m) | CliError::MalformedCsv(m) | CliError::Runtime(m) => m,
        }
    }
}

impl fmt::Display for CliError {
    /// `error kind=<kind> code=<n> message=<json string>`, always one line.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "error kind={} code={} message={:?}", self.kind(), self.code(), self.message().replace('\n', " "))
    }
}

impl From<adssm::Error> for CliError {
    fn from(e: adssm::Error) -> Self {
        match &e {
            adssm::Error::Io(io) if io.kind() == ErrorKind::NotFound => CliError::MissingFile(e.to_string()),
            adssm::Error::MalformedCsv { .. } => CliError::MalformedCsv(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.kind() == ErrorKind::NotFound {
        CliError::MissingFile(msg)
    } else {
        CliError::Runtime(msg)
    }
}

fn resolve_config(common: &Common) -> Result<Config, CliError> {
    let mut cfg = Config::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        cfg.apply_text(&text)?;
    }
    for kv in &common.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k, v)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Applies command-specific flags that shadow config keys.
fn apply_flags(cfg: &mut Config, command: &Command) {
    if let Command::Train { epochs, lr, batch_size, threads, .. } = command {
        if let Some(v) = epochs {
            cfg.epochs = *v;
            cfg.anneal_end_epoch = cfg.anneal_end_epoch.min(*v);
        }
        if let Some(v) = lr {
            cfg.lr = *v;
        }
        if let Some(v) = batch_size {
            cfg.batch_size = *v;
        }
        if let Some(v) = threads {
            cfg.threads = *v;
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let root = match Root::try_parse_from(argv) {
        Ok(r) => r,
        Err(e) => {
            use clap::error::ErrorKind as K;
            if matches!(e.kind(), K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand) {
                let _ = e.print();
                return 0;
            }
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ").to_string();
            eprintln!("{}", CliError::Usage(first));
            return 2;
        }
    };
    match execute(&root.common, &root.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}

fn execute(common: &Common, command: &Command) -> Result<(), CliError> {
    let mut cfg = resolve_config(common)?;
    apply_flags(&mut cfg, command);
    info!("resolved config: {}", cfg.resolved());
    info!("seed: {}", cfg.seed);
    require(&inputs(command))?;
    match command {
        Command::Synth { subjects, afib, duration, out } => synth(&cfg, *subjects, *afib, *duration, out),
        Command::Preprocess { manifest, out, noise } => preprocess(&cfg, manifest, out, *noise),
        Command::Train { data, out, resume, .. } => train(&cfg, data, out, resume.as_deref()),
        Command::Translate { ppg, checkpoint, out, reference, mode, draws, cohort } => {
            let mode = if mode == "sample" { Mode::Sample(*draws) } else { Mode::Mean };
            translate(&cfg, ppg, checkpoint, out, reference.as_deref(), mode, cohort.parse()?)
        }
        Command::Evaluate { pred, reference, records, cohort, out } => {
            evaluate(&cfg, pred.as_deref(), reference.as_deref(), records.as_deref(), cohort.parse()?, out.as_deref())
        }
        Command::Noise { input, out, std, components } => noise(&cfg, input, out, *std, components),
        Command::Gradcheck { strict } => gradcheck(&cfg, *strict),
    }
}

/// Input files are checked up front so the error names the path.
fn require(paths: &[Option<&Path>]) -> Result<(), CliError> {
    for p in paths.iter().flatten() {
        if !p.exists() {
            return Err(CliError::MissingFile(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

fn inputs(command: &Command) -> Vec<Option<&Path>> {
    match command {
        Command::Synth { .. } | Command::Gradcheck { .. } => vec![],
        Command::Preprocess { manifest, .. } => vec![Some(manifest.as_path())],
        Command::Train { data, resume, .. } => vec![Some(data.as_path()), resume.as_deref()],
        Command::Translate { ppg, checkpoint, reference, .. } => vec![Some(ppg.as_path()), Some(checkpoint.as_path()), reference.as_deref()],
        Command::Evaluate { pred, reference, records, .. } => vec![pred.as_deref(), reference.as_deref(), records.as_deref()],
        Command::Noise { input, .. } => vec![Some(input.as_path())],
    }
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

fn synth(cfg: &Config, subjects: usize, afib: usize, duration: f64, out: &Path) -> Result<(), CliError> {
    if afib > subjects {
        return Err(CliError::Usage(format!("--afib {afib} exceeds --subjects {subjects}")));
    }
    create_dir(out)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut manifest = Vec::with_capacity(subjects);
    for i in 0..subjects {
        let is_afib = i >= subjects - afib;
        let profile = SubjectProfile::random(&mut rng, is_afib);
        let pair = generate_pair(&profile, duration, cfg.sample_rate_hz, adssm::seed::derive_seed(cfg.seed, i as u64))?;
        let id = format!("subject{i:02}");
        let (ppg_name, ecg_name) = (format!("{id}_ppg.csv"), format!("{id}_ecg.csv"));
        write_waveform_csv(&out.join(&ppg_name), &pair.ppg)?;
        write_waveform_csv(&out.join(&ecg_name), &pair.ecg)?;
        write_truth_csv(&out.join(format!("{id}_peaks.csv")), &pair.truth)?;
        manifest.push(ManifestRecord {
            record_id: id.clone(),
            subject: id,
            label: if is_afib { RecordLabel::Afib } else { RecordLabel::Healthy },
            ppg_path: ppg_name.into(),
            ecg_path: ecg_name.into(),
        });
    }
    write_manifest(&out.join("manifest.csv"), &manifest)?;
    println!("wrote {subjects} records ({afib} afib) to {}", out.display());
    Ok(())
}

fn preprocess(cfg: &Config, manifest: &Path, out: &Path, noisy: bool) -> Result<(), CliError> {
    let mut pre = cfg.preprocess();
    if noisy {
        pre.noise = Some(NoiseSpec::robustness());
    }
    let chunks = preprocess_manifest(manifest, &pre)?;
    let splits = split_chunks(chunks, &cfg.split(), cfg.chunk_seconds);
    splits.save(out)?;
    println!("train {} val {} test {} chunks -> {}", splits.train.len(), splits.val.len(), splits.test.len(), out.display());
    Ok(())
}

fn train(cfg: &Config, data: &Path, out: &Path, resume: Option<&Path>) -> Result<(), CliError> {
    let splits = Splits::load(data)?;
    let data = TrainData { train: Splits::examples(&splits.train), val: Splits::examples(&splits.val) };
    let tc = cfg.train_config(out);
    let state = match resume {
        Some(p) => TrainState::load(p)?,
        None => TrainState::fresh(tc.dims, tc.seed, tc.lr)?,
    };
    let state = continue_training(state, &data, &tc, tc.schedule.total_epochs)?;
    match state.history.last() {
        Some(r) => println!("epoch {} train_loss {} val_loss {:?}", r.epoch, r.train_loss, r.val_loss),
        None => println!("nothing to do: checkpoint already at epoch {}", state.epoch),
    }
    Ok(())
}

fn write_series(path: &Path, samples: Vec<f64>, rate: f64) -> Result<(), CliError> {
    write_waveform_csv(path, &Waveform::new(samples, rate, Channel::Ecg)?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn translate(
    cfg: &Config,
    ppg_path: &Path,
    checkpoint: &Path,
    out: &Path,
    reference: Option<&Path>,
    mode: Mode,
    cohort: Cohort,
) -> Result<(), CliError> {
    let params = load_params(checkpoint)?;
    let ppg = read_waveform_csv(ppg_path, Channel::Ppg)?;
    create_dir(out)?;
    let rate = ppg.sample_rate_hz();
    let opts = TranslateOptions {
        mode,
        seed: cfg.seed,
        sample_rate_hz: rate,
        output_normalization: None,
        model: ModelOptions { noise_scale: 1.0, ..cfg.model_options() },
    };
    let record_id = ppg_path.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string();
    let mut segments = String::from("chunk_id,out_start,out_len,source_onset_s\n");
    let (mut mean, mut lower, mut upper, mut refs) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut records: Vec<MetricRecord> = Vec::new();
    let mut push = |t: &adssm::Translation, onset_s: f64, segments: &mut String| -> Result<(), CliError> {
        segments.push_str(&format!("{},{},{},{}\n", t.chunk_id, mean.len(), t.ecg_mean.len(), onset_s));
        mean.extend_from_slice(t.ecg_mean.samples());
        if t.ecg_samples.as_ref().is_some_and(|d| d.len() >= adssm::translate::MIN_BAND_DRAWS) {
            let (lo, hi) = uncertainty_band(t)?;
            lower.extend_from_slice(lo.samples());
            upper.extend_from_slice(hi.samples());
        }
        Ok(())
    };
    match reference {
        Some(ref_path) => {
            let ecg = read_waveform_csv(ref_path, Channel::Ecg)?;
            let info = RecordInfo { record_id: record_id.clone(), subject: record_id.clone(), label: RecordLabel::Healthy };
            for c in preprocess_record(&ppg, &ecg, &info, &cfg.preprocess())? {
                let (t, rec) = evaluate_chunk(&c, &params, &opts, Units::Signal, cohort)?;
                let onset = c.start_s + c.ppg.onsets[0] as f64 / rate;
                push(&t, onset, &mut segments)?;
                refs.extend(adssm::translate::reference_trace(&c, Units::Signal)?);
                records.push(rec);
            }
        }
        None => {
            for c in preprocess_ppg(&ppg, &record_id, &cfg.preprocess())? {
                let t = translate_chunk(&c.ppg, &params, &opts)?;
                push(&t, c.start_s + c.ppg.onsets[0] as f64 / rate, &mut segments)?;
            }
        }
    }
    if mean.len() < 2 {
        return Err(CliError::Runtime("no translatable chunks in the input".into()));
    }
    write_series(&out.join("ecg_translated.csv"), mean, rate)?;
    fs::write(out.join("segments.csv"), segments).map_err(|e| io_err(out, e))?;
    if !lower.is_empty() {
        write_series(&out.join("band_lower.csv"), lower, rate)?;
        write_series(&out.join("band_upper.csv"), upper, rate)?;
    }
    if !records.is_empty() {
        write_series(&out.join("reference_aligned.csv"), refs, rate)?;
        write_records_csv(&out.join("metrics.csv"), &records)?;
        let report = aggregate(&records)?;
        write_report_csv(&out.join("report.csv"), &report)?;
        println!("{report}");
    }
    println!("translated {} -> {}", ppg_path.display(), out.display());
    Ok(())
}

fn evaluate(
    cfg: &Config,
    pred: Option<&Path>,
    reference: Option<&Path>,
    records_path: Option<&Path>,
    cohort: Cohort,
    out: Option<&Path>,
) -> Result<(), CliError> {
    let records = match (pred, reference, records_path) {
        (Some(p), Some(r), None) => {
            let pw = read_waveform_csv(p, Channel::Ecg)?;
            let rw = read_waveform_csv(r, Channel::Ecg)?;
            if pw.len() != rw.len() {
                return Err(CliError::Runtime(format!("prediction has {} samples but reference has {}", pw.len(), rw.len())));
            }
            let subject = r.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string();
            let (pc, rc) = (chunk(&pw, cfg.chunk_seconds)?, chunk(&rw, cfg.chunk_seconds)?);
            let mut rows = Vec::with_capacity(pc.len());
            for (i, (a, b)) in pc.iter().zip(&rc).enumerate() {
                rows.push(MetricRecord::compute(&format!("{subject}-c{i:03}"), &subject, cohort, b.samples(), a.samples())?);
            }
            if rows.is_empty() {
                rows.push(MetricRecord::compute(&format!("{subject}-c000"), &subject, cohort, rw.samples(), pw.samples())?);
            }
            rows
        }
        (None, None, Some(path)) => read_records_csv(path)?,
        _ => return Err(CliError::Usage("evaluate needs either --pred and --ref, or --records".into())),
    };
    for r in &records {
        println!("{},{},{},{},{},{}", r.chunk_id, r.subject, r.cohort, r.pearson, r.rmse_mv, r.snr_db);
    }
    let report = aggregate(&records)?;
    println!("{report}");
    if let Some(path) = out {
        write_records_csv(path, &records)?;
        write_report_csv(&path.with_extension("report.csv"), &report)?;
    }
    Ok(())
}

fn parse_components(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (a, f) = p.split_once(':').ok_or_else(|| CliError::Usage(format!("component {p:?} is not amplitude:frequency")))?;
            let num = |v: &str| v.trim().parse::<f64>().map_err(|_| CliError::Usage(format!("bad number {v:?} in {p:?}")));
            Ok((num(a)?, num(f)?))
        })
        .collect()
}

fn noise(cfg: &Config, input: &Path, out: &Path, std: f64, components: &str) -> Result<(), CliError> {
    let spec = NoiseSpec { baseline_components: parse_components(components)?, gaussian_std: std };
    let w = read_waveform_csv(input, Channel::Ppg)?;
    write_waveform_csv(out, &add_noise(&w, &spec, cfg.seed)?)?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gradcheck(cfg: &Config, strict: bool) -> Result<(), CliError> {
    let opts = ModelOptions { strict_posterior: strict, ..ModelOptions::default() };
    let report = standard_check(cfg.seed, &opts)?;
    if let Some(w) = report.worst() {
        println!("worst tensor {} rel_error {:e}", w.param.name(), w.rel_error);
    }
    println!("max_rel_error {:e} tolerance {:e}", report.max_rel_error, TOLERANCE);
    if report.max_rel_error < TOLERANCE {
        Ok(())
    } else {
        Err(CliError::Runtime(format!("gradient check failed: max relative error {:e}", report.max_rel_error)))
    }
}
