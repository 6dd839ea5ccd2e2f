//! CSV formats: waveforms (`t_sec,value`), paired-record manifests and
//! ground-truth peak tables.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Channel, Waveform};
use crate::error::{Error, Result};

/// Tolerance on sample-time uniformity when importing a waveform.
pub const TIME_TOLERANCE_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordLabel {
    Healthy,
    Afib,
}

impl std::fmt::Display for RecordLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RecordLabel::Healthy => "healthy",
            RecordLabel::Afib => "afib",
        })
    }
}

/// One row of a paired-record manifest. Paths are relative to the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub record_id: String,
    pub subject: String,
    pub label: RecordLabel,
    pub ppg_path: PathBuf,
    pub ecg_path: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TruthRow {
    pub beat_index: usize,
    pub r_time_s: f64,
    pub systolic_time_s: f64,
}

#[derive(Deserialize)]
struct WaveRow {
    t_sec: f64,
    value: f64,
}

fn malformed(path: &Path, msg: impl Into<String>) -> Error {
    Error::MalformedCsv { path: path.display().to_string(), msg: msg.into() }
}

fn open(path: &Path) -> Result<File> {
    Ok(File::open(path)?)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => malformed(path, format!("{other:?}")),
    }
}

/// Reads a `t_sec,value` CSV and infers the sample rate from the time column.
pub fn read_waveform_csv(path: &Path, label: Channel) -> Result<Waveform> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let headers = rdr.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t_sec", "value"] {
        return Err(malformed(path, format!("expected header t_sec,value, got {}", headers.iter().collect::<Vec<_>>().join(","))));
    }
    let mut t = Vec::new();
    let mut v = Vec::new();
    for (line, row) in rdr.deserialize::<WaveRow>().enumerate() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if !row.t_sec.is_finite() || !row.value.is_finite() {
            return Err(malformed(path, format!("non-finite value on data row {}", line + 1)));
        }
        t.push(row.t_sec);
        v.push(row.value);
    }
    if t.len() < 2 {
        return Err(malformed(path, "need at least two samples"));
    }
    let dt = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
    if !(dt > 0.0) {
        return Err(malformed(path, "time column must be strictly increasing"));
    }
    for (i, &ti) in t.iter().enumerate() {
        if i > 0 && ti <= t[i - 1] {
            return Err(malformed(path, format!("time not strictly increasing at data row {}", i + 1)));
        }
        if (ti - (t[0] + i as f64 * dt)).abs() > TIME_TOLERANCE_S {
            return Err(malformed(path, format!("non-uniform sampling at data row {}", i + 1)));
        }
    }
    Waveform::new(v, 1.0 / dt, label)
}

pub fn write_waveform_csv(path: &Path, w: &Waveform) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    wtr.write_record(["t_sec", "value"]).map_err(|e| csv_error(path, e))?;
    let fs = w.sample_rate_hz();
    for (i, v) in w.samples().iter().enumerate() {
        wtr.write_record([format!("{}", i as f64 / fs), format!("{v}")]).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRecord>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    let mut out = Vec::new();
    for row in rdr.deserialize::<ManifestRecord>() {
        out.push(row.map_err(|e| csv_error(path, e))?);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in records {
        wtr.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_truth_csv(path: &Path, rows: &[TruthRow]) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for r in rows {
        wtr.serialize(r).map_err(|e| csv_error(path, e))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_truth_csv(path: &Path) -> Result<Vec<TruthRow>> {
    let mut rdr = csv::Reader::from_reader(open(path)?);
    rdr.deserialize::<TruthRow>().map(|r| r.map_err(|e| csv_error(path, e))).collect()
}
