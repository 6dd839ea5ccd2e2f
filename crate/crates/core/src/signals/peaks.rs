use std::collections::BTreeSet;

use super::{PeakList, Waveform};
use crate::error::{Error, Result};

/// Moving-average window of the adaptive threshold, in seconds.
const MA_WINDOW_S: f64 = 0.75;
/// Threshold offset as a fraction of (max - mean).
const THRESHOLD_FRACTION: f64 = 0.15;

/// Local maxima above a moving-average-plus-offset threshold, thinned so that
/// no two peaks are closer than the refractory gap implied by `max_bpm`.
///
/// Among competing candidates the larger one wins; equal heights keep the
/// earliest index. A signal without qualifying maxima gives an empty list.
pub fn detect_peaks(w: &Waveform, min_bpm: f64, max_bpm: f64) -> Result<PeakList> {
    if !(20.0..=300.0).contains(&min_bpm) || !(20.0..=300.0).contains(&max_bpm) || min_bpm >= max_bpm {
        return Err(Error::InvalidArgument(format!(
            "heart-rate bounds must satisfy 20 <= min ({min_bpm}) < max ({max_bpm}) <= 300"
        )));
    }
    let x = w.samples();
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("peak detector input".into()));
    }
    let n = x.len();
    let fs = w.sample_rate_hz();

    // centering makes the detector insensitive to constant offsets
    let mean = x.iter().sum::<f64>() / n as f64;
    let y: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let offset = THRESHOLD_FRACTION * max;

    let half = ((MA_WINDOW_S * fs) / 2.0).round().max(1.0) as usize;
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for v in &y {
        prefix.push(prefix.last().unwrap() + v);
    }
    let moving_avg = |i: usize| {
        let lo = i.saturating_sub(half);
        let hi = (i + half + 1).min(n);
        (prefix[hi] - prefix[lo]) / (hi - lo) as f64
    };

    let mut candidates: Vec<usize> = (1..n.saturating_sub(1))
        .filter(|&i| y[i] > y[i - 1] && y[i] >= y[i + 1] && y[i] > moving_avg(i) + offset)
        .collect();
    candidates.sort_by(|&a, &b| y[b].total_cmp(&y[a]).then(a.cmp(&b)));

    let gap = fs * 60.0 / max_bpm;
    let mut accepted = BTreeSet::new();
    for i in candidates {
        let clear_before = accepted.range(..i).next_back().is_none_or(|&j: &usize| ((i - j) as f64) >= gap);
        let clear_after = accepted.range(i..).next().is_none_or(|&j: &usize| ((j - i) as f64) >= gap);
        if clear_before && clear_after {
            accepted.insert(i);
        }
    }
    PeakList::new(accepted.into_iter().collect())
}
