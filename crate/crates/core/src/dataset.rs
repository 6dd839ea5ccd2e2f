//! From paired waveform records to aligned, normalized training chunks.
//!
//! Per record: optional noise on the raw PPG (and optionally ECG), bandpass
//! filtering of the full record, fixed-length chunking, peak detection and
//! interval segmentation per chunk, PP/RR alignment and per-chunk
//! normalization. Chunks that cannot be segmented are skipped with a warning.

use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Example;
use crate::seed::{derive_seed, hash_str};
use crate::signals::io::{read_manifest, read_waveform_csv, RecordLabel};
use crate::signals::{
    add_noise, align_pairs, bandpass_filter, chunk, detect_peaks, normalize, segment_intervals_to, Channel, IntervalSequence, NoiseSpec,
    Waveform, CHUNK_SECONDS, ECG_BAND_HZ, INTERVAL_LEN, PPG_BAND_HZ,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub ppg_band_hz: (f64, f64),
    pub ecg_band_hz: (f64, f64),
    pub chunk_seconds: f64,
    pub interval_len: usize,
    pub min_bpm: f64,
    pub max_bpm: f64,
    /// Corruption applied to the raw PPG before filtering.
    pub noise: Option<NoiseSpec>,
    /// Also corrupt the ECG with the same spec (independent draw).
    pub noise_on_ecg: bool,
    pub noise_seed: u64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            ppg_band_hz: PPG_BAND_HZ,
            ecg_band_hz: ECG_BAND_HZ,
            chunk_seconds: CHUNK_SECONDS,
            interval_len: INTERVAL_LEN,
            min_bpm: 30.0,
            max_bpm: 200.0,
            noise: None,
            noise_on_ecg: false,
            noise_seed: 0,
        }
    }
}

/// One aligned chunk with enough metadata to evaluate and report it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    pub id: String,
    pub record_id: String,
    pub subject: String,
    pub label: RecordLabel,
    /// Position of the chunk within its record.
    pub index: usize,
    pub start_s: f64,
    /// Normalized PP intervals.
    pub ppg: IntervalSequence,
    /// Normalized RR intervals, row `t` paired with `ppg` row `t`.
    pub ecg: IntervalSequence,
}

impl Chunk {
    pub fn example(&self) -> Example {
        Example { id: self.id.clone(), x: self.ppg.segments.clone(), y: self.ecg.segments.clone() }
    }

    pub fn intervals(&self) -> usize {
        self.ppg.len()
    }
}

/// Identity of the record a pair of waveforms came from.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordInfo {
    pub record_id: String,
    pub subject: String,
    pub label: RecordLabel,
}

fn chunk_pair(ppg: &Waveform, ecg: &Waveform, id: &str, cfg: &PreprocessConfig) -> Result<(IntervalSequence, IntervalSequence)> {
    let pp = detect_peaks(ppg, cfg.min_bpm, cfg.max_bpm)?;
    let rr = detect_peaks(ecg, cfg.min_bpm, cfg.max_bpm)?;
    let pp = segment_intervals_to(ppg, &pp, id, cfg.interval_len)?;
    let rr = segment_intervals_to(ecg, &rr, id, cfg.interval_len)?;
    let aligned = align_pairs(&pp, &rr)?;
    Ok((normalize(&aligned.ppg), normalize(&aligned.ecg)))
}

/// Runs the whole pipeline on one paired record.
pub fn preprocess_record(ppg: &Waveform, ecg: &Waveform, info: &RecordInfo, cfg: &PreprocessConfig) -> Result<Vec<Chunk>> {
    if ppg.sample_rate_hz() != ecg.sample_rate_hz() {
        return Err(Error::InvalidArgument(format!(
            "{}: PPG at {} Hz but ECG at {} Hz",
            info.record_id,
            ppg.sample_rate_hz(),
            ecg.sample_rate_hz()
        )));
    }
    let (mut ppg, mut ecg) = (ppg.clone(), ecg.clone());
    if let Some(spec) = &cfg.noise {
        let seed = derive_seed(cfg.noise_seed, hash_str(&info.record_id));
        ppg = add_noise(&ppg, spec, seed)?;
        if cfg.noise_on_ecg {
            ecg = add_noise(&ecg, spec, derive_seed(seed, 1))?;
        }
    }
    let ppg = bandpass_filter(&ppg, cfg.ppg_band_hz.0, cfg.ppg_band_hz.1)?;
    let ecg = bandpass_filter(&ecg, cfg.ecg_band_hz.0, cfg.ecg_band_hz.1)?;
    let ppg_chunks = chunk(&ppg, cfg.chunk_seconds)?;
    let ecg_chunks = chunk(&ecg, cfg.chunk_seconds)?;
    let mut out = Vec::new();
    for (index, (p, e)) in ppg_chunks.iter().zip(&ecg_chunks).enumerate() {
        let id = format!("{}-c{index:03}", info.record_id);
        match chunk_pair(p, e, &id, cfg) {
            Ok((ppg, ecg)) => out.push(Chunk {
                id,
                record_id: info.record_id.clone(),
                subject: info.subject.clone(),
                label: info.label,
                index,
                start_s: index as f64 * cfg.chunk_seconds,
                ppg,
                ecg,
            }),
            Err(Error::UnusableChunk(msg)) => warn!("skipping chunk: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// A PPG-only chunk, as available when no ECG exists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PpgChunk {
    pub id: String,
    pub index: usize,
    pub start_s: f64,
    /// Normalized PP intervals; `onsets` are relative to the chunk start.
    pub ppg: IntervalSequence,
}

/// The PPG half of the pipeline: filter, chunk, segment and normalize.
pub fn preprocess_ppg(ppg: &Waveform, record_id: &str, cfg: &PreprocessConfig) -> Result<Vec<PpgChunk>> {
    let mut ppg = ppg.clone();
    if let Some(spec) = &cfg.noise {
        ppg = add_noise(&ppg, spec, derive_seed(cfg.noise_seed, hash_str(record_id)))?;
    }
    let ppg = bandpass_filter(&ppg, cfg.ppg_band_hz.0, cfg.ppg_band_hz.1)?;
    let mut out = Vec::new();
    for (index, p) in chunk(&ppg, cfg.chunk_seconds)?.iter().enumerate() {
        let id = format!("{record_id}-c{index:03}");
        let seq = detect_peaks(p, cfg.min_bpm, cfg.max_bpm).and_then(|peaks| segment_intervals_to(p, &peaks, &id, cfg.interval_len));
        match seq {
            Ok(seq) => out.push(PpgChunk { id, index, start_s: index as f64 * cfg.chunk_seconds, ppg: normalize(&seq) }),
            Err(Error::UnusableChunk(msg)) => warn!("skipping chunk: {msg}"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Reads every record listed in a manifest (paths relative to the manifest)
/// and preprocesses it.
pub fn preprocess_manifest(manifest: &Path, cfg: &PreprocessConfig) -> Result<Vec<Chunk>> {
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for rec in read_manifest(manifest)? {
        let ppg = read_waveform_csv(&base.join(&rec.ppg_path), Channel::Ppg)?;
        let ecg = read_waveform_csv(&base.join(&rec.ecg_path), Channel::Ecg)?;
        let info = RecordInfo { record_id: rec.record_id, subject: rec.subject, label: rec.label };
        out.extend(preprocess_record(&ppg, &ecg, &info, cfg)?);
    }
    Ok(out)
}

/// Time-based split within each record: the first `train_s` seconds train,
/// the next `val_s` validate, the rest test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_s: f64,
    pub val_s: f64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self { train_s: 48.0, val_s: 12.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<Chunk>,
    pub val: Vec<Chunk>,
    pub test: Vec<Chunk>,
}

impl Splits {
    pub fn examples(chunks: &[Chunk]) -> Vec<Example> {
        chunks.iter().map(Chunk::example).collect()
    }
}

/// Assigns each chunk by where it ends: within `train_s`, within
/// `train_s + val_s`, or later.
pub fn split_chunks(chunks: Vec<Chunk>, spec: &SplitSpec, chunk_seconds: f64) -> Splits {
    let mut s = Splits::default();
    let eps = 1e-9;
    for c in chunks {
        let end = c.start_s + chunk_seconds;
        if end <= spec.train_s + eps {
            s.train.push(c);
        } else if end <= spec.train_s + spec.val_s + eps {
            s.val.push(c);
        } else {
            s.test.push(c);
        }
    }
    s
}

pub fn save_chunks(path: &Path, chunks: &[Chunk]) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(f, chunks)?;
    Ok(())
}

pub fn load_chunks(path: &Path) -> Result<Vec<Chunk>> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    Ok(serde_json::from_reader(f)?)
}

impl Splits {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}
