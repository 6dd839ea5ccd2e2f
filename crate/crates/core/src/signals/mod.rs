//! Preprocessing from raw paired waveforms to aligned, normalized interval
//! sequences, plus the baseline-wander/Gaussian noise recipe used for
//! robustness experiments.

mod filter;
mod intervals;
pub mod io;
mod noise;
mod peaks;

pub use filter::{bandpass_filter, Biquad, ECG_BAND_HZ, PPG_BAND_HZ};
pub use intervals::{align_pairs, chunk, normalize, resample_linear, segment_intervals, segment_intervals_to, AlignedPair};
pub use noise::add_noise;
pub use peaks::detect_peaks;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sampling rate of the waveform records.
pub const SAMPLE_RATE_HZ: f64 = 125.0;
/// Chunk duration used throughout training and evaluation.
pub const CHUNK_SECONDS: f64 = 4.0;
/// Every interval is linearly resampled to this many points.
pub const INTERVAL_LEN: usize = 90;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    Ppg,
    Ecg,
}

impl std::fmt::Display for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Channel::Ppg => write!(f, "PPG"),
            Channel::Ecg => write!(f, "ECG"),
        }
    }
}

/// A uniformly sampled single-channel signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: f64,
    label: Channel,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, label: Channel) -> Result<Self> {
        if !(sample_rate_hz > 0.0) || !sample_rate_hz.is_finite() {
            return Err(Error::InvalidArgument(format!("sample rate must be positive, got {sample_rate_hz}")));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "waveform needs at least 2 samples, got {}",
                samples.len()
            )));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{label} waveform sample {i}")));
        }
        Ok(Self { samples, sample_rate_hz, label })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn label(&self) -> Channel {
        self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz
    }

    /// Same rate and label, new samples. Samples are validated again.
    pub fn with_samples(&self, samples: Vec<f64>) -> Result<Self> {
        Self::new(samples, self.sample_rate_hz, self.label)
    }
}

/// Sample indices of detected systolic or R peaks, strictly increasing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeakList {
    pub indices: Vec<usize>,
}

impl PeakList {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("peak indices must be strictly increasing".into()));
        }
        Ok(Self { indices })
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntervalKind {
    /// Systolic peak to systolic peak (PPG).
    Pp,
    /// R peak to R peak (ECG).
    Rr,
}

/// Affine map used by [`normalize`]: `normalized = (raw - offset) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub offset: f64,
    pub scale: f64,
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization { offset: 0.0, scale: 1.0 };

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.offset) / self.scale
    }

    pub fn invert(&self, v: f64) -> f64 {
        v * self.scale + self.offset
    }
}

/// One chunk's peak-to-peak segments, each resampled to a fixed length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalSequence {
    /// `T` rows, each of the fixed resampled length.
    pub segments: Vec<Vec<f64>>,
    /// Length in samples of each interval before resampling.
    pub original_lengths: Vec<usize>,
    /// Sample index (within the chunk) where each interval starts.
    pub onsets: Vec<usize>,
    pub kind: IntervalKind,
    pub chunk_id: String,
    /// Present once the sequence has gone through [`normalize`].
    pub normalization: Option<Normalization>,
}

impl IntervalSequence {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn width(&self) -> usize {
        self.segments.first().map_or(0, Vec::len)
    }

    /// Undo [`normalize`]; a no-op for sequences that were never normalized.
    pub fn denormalize(&self) -> IntervalSequence {
        let norm = self.normalization.unwrap_or(Normalization::IDENTITY);
        IntervalSequence {
            segments: self
                .segments
                .iter()
                .map(|row| row.iter().map(|&v| norm.invert(v)).collect())
                .collect(),
            normalization: None,
            ..self.clone()
        }
    }
}

/// Baseline-wander sinusoids plus white Gaussian noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// `(amplitude, frequency_hz)` pairs.
    pub baseline_components: Vec<(f64, f64)>,
    pub gaussian_std: f64,
}

impl NoiseSpec {
    /// Three baseline sinusoids (0.3 @ 0.3 Hz, 0.4 @ 0.2 Hz, 0.1 @ 0.9 Hz)
    /// and Gaussian noise with standard deviation 0.3.
    pub fn robustness() -> Self {
        Self { baseline_components: vec![(0.3, 0.3), (0.4, 0.2), (0.1, 0.9)], gaussian_std: 0.3 }
    }

    pub fn none() -> Self {
        Self { baseline_components: Vec::new(), gaussian_std: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gaussian_std >= 0.0) || !self.gaussian_std.is_finite() {
            return Err(Error::InvalidArgument(format!("noise std must be >= 0, got {}", self.gaussian_std)));
        }
        for &(a, f) in &self.baseline_components {
            if !(f > 0.0) || !f.is_finite() || !a.is_finite() {
                return Err(Error::InvalidArgument(format!("bad baseline component ({a}, {f} Hz)")));
            }
        }
        Ok(())
    }
}
