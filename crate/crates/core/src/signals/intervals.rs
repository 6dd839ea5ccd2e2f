use super::{Channel, IntervalKind, IntervalSequence, Normalization, PeakList, Waveform, INTERVAL_LEN};
use crate::error::{Error, Result};

/// Consecutive non-overlapping chunks of `seconds * rate` samples. The
/// trailing remainder is dropped; a signal shorter than one chunk yields none.
pub fn chunk(w: &Waveform, seconds: f64) -> Result<Vec<Waveform>> {
    if !(seconds > 0.0) || !seconds.is_finite() {
        return Err(Error::InvalidArgument(format!("chunk length must be positive, got {seconds} s")));
    }
    let per = (seconds * w.sample_rate_hz()).round() as usize;
    if per < 2 {
        return Err(Error::InvalidArgument(format!("chunk of {seconds} s is shorter than two samples")));
    }
    w.samples()
        .chunks_exact(per)
        .map(|c| Waveform::new(c.to_vec(), w.sample_rate_hz(), w.label()))
        .collect()
}

/// Linear interpolation of `src` onto `n` evenly spaced points spanning the
/// same support. First and last values are reproduced exactly.
pub fn resample_linear(src: &[f64], n: usize) -> Vec<f64> {
    let len = src.len();
    if len == 0 || n == 0 {
        return Vec::new();
    }
    if len == 1 || n == 1 {
        return vec![src[0]; n];
    }
    let span = (len - 1) as f64;
    let denom = (n - 1) as f64;
    (0..n)
        .map(|k| {
            let pos = k as f64 * span / denom;
            let i = pos.floor() as usize;
            if i >= len - 1 {
                return src[len - 1];
            }
            let frac = pos - i as f64;
            if frac == 0.0 {
                src[i]
            } else {
                src[i] + frac * (src[i + 1] - src[i])
            }
        })
        .collect()
}

/// Peak-to-peak segments `samples[p_i .. p_{i+1})`, each resampled to the
/// standard interval length.
pub fn segment_intervals(w: &Waveform, peaks: &PeakList, chunk_id: &str) -> Result<IntervalSequence> {
    segment_intervals_to(w, peaks, chunk_id, INTERVAL_LEN)
}

pub fn segment_intervals_to(w: &Waveform, peaks: &PeakList, chunk_id: &str, target: usize) -> Result<IntervalSequence> {
    if peaks.len() < 2 {
        return Err(Error::UnusableChunk(format!("{chunk_id}: need at least 2 peaks, found {}", peaks.len())));
    }
    let x = w.samples();
    if let Some(&last) = peaks.indices.last() {
        if last >= x.len() {
            return Err(Error::InvalidArgument(format!("{chunk_id}: peak index {last} outside waveform")));
        }
    }
    let mut segments = Vec::with_capacity(peaks.len() - 1);
    let mut lengths = Vec::with_capacity(peaks.len() - 1);
    for pair in peaks.indices.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        if b - a < 2 {
            return Err(Error::UnusableChunk(format!("{chunk_id}: interval at sample {a} shorter than 2 samples")));
        }
        segments.push(resample_linear(&x[a..b], target));
        lengths.push(b - a);
    }
    Ok(IntervalSequence {
        segments,
        original_lengths: lengths,
        onsets: peaks.indices[..peaks.len() - 1].to_vec(),
        kind: match w.label() {
            Channel::Ppg => IntervalKind::Pp,
            Channel::Ecg => IntervalKind::Rr,
        },
        chunk_id: chunk_id.to_string(),
        normalization: None,
    })
}

/// Output of [`align_pairs`].
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedPair {
    pub ppg: IntervalSequence,
    pub ecg: IntervalSequence,
    /// ECG onset minus PPG onset, in samples, for each pair.
    pub lags: Vec<usize>,
}

fn select(seq: &IntervalSequence, rows: &[usize]) -> IntervalSequence {
    IntervalSequence {
        segments: rows.iter().map(|&i| seq.segments[i].clone()).collect(),
        original_lengths: rows.iter().map(|&i| seq.original_lengths[i]).collect(),
        onsets: rows.iter().map(|&i| seq.onsets[i]).collect(),
        ..seq.clone()
    }
}

/// Pairs each PP interval with the RR interval whose onset is the nearest one
/// at or after the PP onset. A PP interval is left unpaired when that onset
/// falls outside it; each RR interval is used at most once, in order.
pub fn align_pairs(ppg: &IntervalSequence, ecg: &IntervalSequence) -> Result<AlignedPair> {
    if ppg.is_empty() || ecg.is_empty() {
        return Err(Error::UnusableChunk(format!("{}: empty interval sequence", ppg.chunk_id)));
    }
    let mut pp_rows = Vec::new();
    let mut rr_rows = Vec::new();
    let mut lags = Vec::new();
    let mut j = 0;
    for (i, &onset) in ppg.onsets.iter().enumerate() {
        while j < ecg.len() && ecg.onsets[j] < onset {
            j += 1;
        }
        if j == ecg.len() {
            break;
        }
        let lag = ecg.onsets[j] - onset;
        if lag >= ppg.original_lengths[i] {
            continue;
        }
        pp_rows.push(i);
        rr_rows.push(j);
        lags.push(lag);
        j += 1;
    }
    if pp_rows.is_empty() {
        return Err(Error::UnusableChunk(format!("{}: no overlapping PP/RR intervals", ppg.chunk_id)));
    }
    Ok(AlignedPair { ppg: select(ppg, &pp_rows), ecg: select(ecg, &rr_rows), lags })
}

/// Per-chunk min-max scaling of all rows jointly onto [-1, 1]. A constant
/// chunk maps to zeros. The applied map is stored so that
/// [`IntervalSequence::denormalize`] recovers the raw values.
pub fn normalize(seq: &IntervalSequence) -> IntervalSequence {
    let (lo, hi) = seq
        .segments
        .iter()
        .flatten()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let norm = if hi > lo {
        Normalization { offset: 0.5 * (hi + lo), scale: 0.5 * (hi - lo) }
    } else if lo.is_finite() {
        Normalization { offset: lo, scale: 1.0 }
    } else {
        Normalization::IDENTITY
    };
    let segments = seq
        .segments
        .iter()
        .map(|row| row.iter().map(|&v| norm.apply(v).clamp(-1.0, 1.0)).collect())
        .collect();
    let combined = match seq.normalization {
        None => norm,
        Some(prev) => Normalization { offset: norm.offset * prev.scale + prev.offset, scale: norm.scale * prev.scale },
    };
    IntervalSequence { segments, normalization: Some(combined), ..seq.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ppg(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 125.0, Channel::Ppg).unwrap()
    }

    fn seq_from_onsets(onsets: &[usize], len: usize, kind: IntervalKind) -> IntervalSequence {
        IntervalSequence {
            segments: onsets.iter().map(|&o| vec![o as f64; 4]).collect(),
            original_lengths: vec![len; onsets.len()],
            onsets: onsets.to_vec(),
            kind,
            chunk_id: "c0".into(),
            normalization: None,
        }
    }

    #[test]
    fn chunking_drops_remainder() {
        let w = ppg(vec![0.0; 500]);
        assert_eq!(chunk(&w, 4.0).unwrap().len(), 1);
        let w = ppg(vec![0.0; 1250]);
        let chunks = chunk(&w, 4.0).unwrap();
        assert_eq!(chunks.len(), 2);
        assert!(chunks.iter().all(|c| c.len() == 500));
        let w = ppg(vec![0.0; 499]);
        assert!(chunk(&w, 4.0).unwrap().is_empty());
        assert!(chunk(&w, 0.0).is_err());
    }

    #[test]
    fn ramp_resamples_linearly() {
        let w = ppg((0..60).map(|v| v as f64).collect());
        let peaks = PeakList::new(vec![0, 45]).unwrap();
        let seq = segment_intervals(&w, &peaks, "c").unwrap();
        assert_eq!(seq.len(), 1);
        assert_eq!(seq.original_lengths, vec![45]);
        let row = &seq.segments[0];
        assert_eq!(row.len(), 90);
        assert_eq!(row[0], 0.0);
        assert_eq!(row[89], 44.0);
        for (k, v) in row.iter().enumerate() {
            assert!((v - k as f64 * 44.0 / 89.0).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_interpolation() {
        let w = ppg(vec![0.0, 1.0, 5.0]);
        let peaks = PeakList::new(vec![0, 2]).unwrap();
        let seq = segment_intervals_to(&w, &peaks, "c", 3).unwrap();
        assert_eq!(seq.segments[0], vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn too_few_peaks_is_unusable() {
        let w = ppg(vec![0.0; 10]);
        let err = segment_intervals(&w, &PeakList::new(vec![3]).unwrap(), "c").unwrap_err();
        assert!(matches!(err, Error::UnusableChunk(_)));
    }

    #[test]
    fn identical_trains_pair_identically() {
        let a = seq_from_onsets(&[10, 110, 210], 100, IntervalKind::Pp);
        let b = seq_from_onsets(&[10, 110, 210], 100, IntervalKind::Rr);
        let out = align_pairs(&a, &b).unwrap();
        assert_eq!(out.lags, vec![0, 0, 0]);
        assert_eq!(out.ecg.onsets, vec![10, 110, 210]);
    }

    #[test]
    fn shifted_ecg_pairs_with_uniform_lag() {
        let a = seq_from_onsets(&[10, 110, 210], 100, IntervalKind::Pp);
        let b = seq_from_onsets(&[40, 140, 240], 100, IntervalKind::Rr);
        let out = align_pairs(&a, &b).unwrap();
        assert_eq!(out.lags, vec![30, 30, 30]);
        assert_eq!(out.ppg.onsets, vec![10, 110, 210]);
        assert_eq!(out.ecg.onsets, vec![40, 140, 240]);
    }

    #[test]
    fn truncates_to_common_length() {
        let a = seq_from_onsets(&[0, 100, 200, 300, 400], 100, IntervalKind::Pp);
        let b = seq_from_onsets(&[0, 100, 200, 300], 100, IntervalKind::Rr);
        let out = align_pairs(&a, &b).unwrap();
        assert_eq!(out.ppg.len(), 4);
        assert_eq!(out.ecg.len(), 4);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let a = seq_from_onsets(&[300], 50, IntervalKind::Pp);
        let b = seq_from_onsets(&[0, 100], 100, IntervalKind::Rr);
        assert!(align_pairs(&a, &b).is_err());
    }

    #[test]
    fn normalize_examples() {
        let mut s = seq_from_onsets(&[0], 3, IntervalKind::Pp);
        s.segments = vec![vec![0.0, 1.0, 2.0]];
        assert_eq!(normalize(&s).segments[0], vec![-1.0, 0.0, 1.0]);
        s.segments = vec![vec![4.2; 5]];
        let n = normalize(&s);
        assert_eq!(n.segments[0], vec![0.0; 5]);
        assert_eq!(n.denormalize().segments[0], vec![4.2; 5]);
    }

    proptest! {
        #[test]
        fn resample_keeps_endpoints(src in prop::collection::vec(-10.0f64..10.0, 2..200), n in 2usize..200) {
            let out = resample_linear(&src, n);
            prop_assert_eq!(out.len(), n);
            prop_assert_eq!(out[0], src[0]);
            prop_assert_eq!(out[n - 1], src[src.len() - 1]);
        }

        #[test]
        fn normalize_round_trip_and_idempotence(
            rows in prop::collection::vec(prop::collection::vec(-100.0f64..100.0, 6), 1..5)
        ) {
            let mut s = seq_from_onsets(&vec![0; rows.len()], 6, IntervalKind::Rr);
            s.segments = rows.clone();
            let n = normalize(&s);
            for (a, b) in n.denormalize().segments.iter().flatten().zip(rows.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let twice = normalize(&n);
            for (a, b) in twice.segments.iter().flatten().zip(n.segments.iter().flatten()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn lags_are_never_negative(
            pp in prop::collection::btree_set(0usize..1000, 1..12),
            rr in prop::collection::btree_set(0usize..1000, 1..12),
        ) {
            let pp: Vec<usize> = pp.into_iter().collect();
            let rr: Vec<usize> = rr.into_iter().collect();
            let a = seq_from_onsets(&pp, 200, IntervalKind::Pp);
            let b = seq_from_onsets(&rr, 200, IntervalKind::Rr);
            if let Ok(out) = align_pairs(&a, &b) {
                for (k, lag) in out.lags.iter().enumerate() {
                    prop_assert_eq!(out.ecg.onsets[k], out.ppg.onsets[k] + lag);
                }
            }
        }
    }
}
