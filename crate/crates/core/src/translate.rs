//! Generation: PP intervals in, ECG waveform out.
//!
//! The prior pathway is rolled out from `z_init` over the PP intervals of a
//! chunk. Each emitted 90-point RR interval is stretched back to the length
//! of the PP interval it came from and the intervals are concatenated, so
//! the output lines up sample for sample with the PPG segment it was
//! generated from.

use serde::{Deserialize, Serialize};

use crate::dataset::Chunk;
use crate::error::{Error, Result};
use crate::metrics::{Cohort, MetricRecord};
use crate::model::{prior_rollout, ModelOptions, ParameterSet};
use crate::seed::derive_seed;
use crate::signals::{resample_linear, Channel, IntervalSequence, Normalization, Waveform, SAMPLE_RATE_HZ};

pub const MIN_BAND_DRAWS: usize = 20;
pub const BAND_LOWER: f64 = 0.05;
pub const BAND_UPPER: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Every latent state is its prior mean.
    Mean,
    /// Mean rollout plus this many independent sampled rollouts.
    Sample(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranslateOptions {
    pub mode: Mode,
    /// Seeds the sampled rollouts; draw `d` uses `derive_seed(seed, d)`.
    pub seed: u64,
    pub sample_rate_hz: f64,
    /// Maps model output back to signal units. `None` uses the input
    /// chunk's own normalization.
    pub output_normalization: Option<Normalization>,
    pub model: ModelOptions,
}

impl Default for TranslateOptions {
    fn default() -> Self {
        Self { mode: Mode::Mean, seed: 0, sample_rate_hz: SAMPLE_RATE_HZ, output_normalization: None, model: ModelOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    pub chunk_id: String,
    /// Mean-mode output, denormalized, of length `sum(pp_lengths_used)`.
    pub ecg_mean: Waveform,
    /// Sampled outputs, one row per draw, same length and units as `ecg_mean`.
    pub ecg_samples: Option<Vec<Vec<f64>>>,
    /// `T` emitted intervals in model units, before length restoration.
    pub per_interval_mean: Vec<Vec<f64>>,
    pub pp_lengths_used: Vec<usize>,
    /// Row `t` is the attention over the `T` PP intervals at step `t`.
    pub attention: Vec<Vec<f64>>,
}

/// Resamples each row to its target length and concatenates the results.
pub fn reassemble(rows: &[Vec<f64>], lengths: &[usize]) -> Result<Vec<f64>> {
    if rows.len() != lengths.len() {
        return Err(Error::Shape(format!("{} intervals but {} lengths", rows.len(), lengths.len())));
    }
    let mut out = Vec::with_capacity(lengths.iter().sum());
    for (row, &n) in rows.iter().zip(lengths) {
        out.extend(resample_linear(row, n));
    }
    Ok(out)
}

fn rollout_trace(
    x: &IntervalSequence,
    params: &ParameterSet,
    opts: &TranslateOptions,
    norm: Normalization,
    noise: Option<u64>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let r = prior_rollout(&x.segments, params, &opts.model, noise)?;
    let trace = reassemble(&r.emissions, &x.original_lengths)?;
    let trace: Vec<f64> = trace.into_iter().map(|v| norm.invert(v)).collect();
    if trace.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("translation of {}", x.chunk_id)));
    }
    Ok((trace, r.emissions, r.attention))
}

/// Translates one chunk of (normalized) PP intervals.
pub fn translate_chunk(x: &IntervalSequence, params: &ParameterSet, opts: &TranslateOptions) -> Result<Translation> {
    if x.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no intervals to translate", x.chunk_id)));
    }
    if x.original_lengths.len() != x.len() {
        return Err(Error::Shape(format!("{}: {} intervals but {} lengths", x.chunk_id, x.len(), x.original_lengths.len())));
    }
    if let Some(p) = params.first_non_finite() {
        return Err(Error::NonFinite(format!("parameter {}", p.name())));
    }
    let norm = opts.output_normalization.or(x.normalization).unwrap_or(Normalization::IDENTITY);
    let (mean, per_interval_mean, attention) = rollout_trace(x, params, opts, norm, None)?;
    let ecg_samples = match opts.mode {
        Mode::Mean => None,
        Mode::Sample(0) => return Err(Error::InvalidArgument("sample mode needs at least one draw".into())),
        Mode::Sample(n) => Some(
            (0..n as u64)
                .map(|d| rollout_trace(x, params, opts, norm, Some(derive_seed(opts.seed, d))).map(|r| r.0))
                .collect::<Result<Vec<_>>>()?,
        ),
    };
    Ok(Translation {
        chunk_id: x.chunk_id.clone(),
        ecg_mean: Waveform::new(mean, opts.sample_rate_hz, Channel::Ecg)?,
        ecg_samples,
        per_interval_mean,
        pp_lengths_used: x.original_lengths.clone(),
        attention,
    })
}

/// Linear-interpolated percentile of an ascending slice, at rank `p (n - 1)`.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> f64 {
    let rank = p * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    sorted[lo] + (rank - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Pointwise 5th and 95th percentiles across the Monte Carlo draws.
pub fn uncertainty_band(t: &Translation) -> Result<(Waveform, Waveform)> {
    let draws = t
        .ecg_samples
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("translation has no Monte Carlo draws".into()))?;
    if draws.len() < MIN_BAND_DRAWS {
        return Err(Error::InvalidArgument(format!("need at least {MIN_BAND_DRAWS} draws for a band, got {}", draws.len())));
    }
    let n = t.ecg_mean.len();
    if draws.iter().any(|d| d.len() != n) {
        return Err(Error::Shape("draws and mean trace differ in length".into()));
    }
    let mut lower = Vec::with_capacity(n);
    let mut upper = Vec::with_capacity(n);
    let mut column = vec![0.0; draws.len()];
    for i in 0..n {
        for (c, d) in column.iter_mut().zip(draws) {
            *c = d[i];
        }
        column.sort_by(f64::total_cmp);
        lower.push(percentile_sorted(&column, BAND_LOWER));
        upper.push(percentile_sorted(&column, BAND_UPPER));
    }
    let rate = t.ecg_mean.sample_rate_hz();
    Ok((Waveform::new(lower, rate, Channel::Ecg)?, Waveform::new(upper, rate, Channel::Ecg)?))
}

/// Units in which a translation is compared with its reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    /// Model space, both traces in [-1, 1].
    Normalized,
    /// Both traces mapped back through the reference ECG normalization.
    Signal,
}

/// The reference ECG of a chunk on the translation's time base: each aligned
/// RR interval stretched to its paired PP interval length.
pub fn reference_trace(chunk: &Chunk, units: Units) -> Result<Vec<f64>> {
    let trace = reassemble(&chunk.ecg.segments, &chunk.ppg.original_lengths)?;
    Ok(match (units, chunk.ecg.normalization) {
        (Units::Signal, Some(n)) => trace.into_iter().map(|v| n.invert(v)).collect(),
        _ => trace,
    })
}

/// Translates a chunk's PP intervals and scores the result against its reference.
pub fn evaluate_chunk(
    chunk: &Chunk,
    params: &ParameterSet,
    opts: &TranslateOptions,
    units: Units,
    cohort: Cohort,
) -> Result<(Translation, MetricRecord)> {
    let output_normalization = match units {
        Units::Normalized => Normalization::IDENTITY,
        Units::Signal => chunk.ecg.normalization.unwrap_or(Normalization::IDENTITY),
    };
    let opts = TranslateOptions { output_normalization: Some(output_normalization), ..opts.clone() };
    let t = translate_chunk(&chunk.ppg, params, &opts)?;
    let reference = reference_trace(chunk, units)?;
    let record = MetricRecord::compute(&chunk.id, &chunk.subject, cohort, &reference, t.ecg_mean.samples())?;
    Ok((t, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::gradcheck::random_instance;
    use crate::model::{Dims, Param};
    use crate::signals::IntervalKind;

    fn chunk_of(rows: Vec<Vec<f64>>, lengths: Vec<usize>) -> IntervalSequence {
        let onsets = lengths.iter().scan(0, |acc, &l| {
            let s = *acc;
            *acc += l;
            Some(s)
        });
        IntervalSequence {
            onsets: onsets.collect(),
            segments: rows,
            original_lengths: lengths,
            kind: IntervalKind::Pp,
            chunk_id: "c0".into(),
            normalization: Some(Normalization { offset: 0.5, scale: 2.0 }),
        }
    }

    fn setup() -> (ParameterSet, IntervalSequence) {
        let (params, ex) = random_instance(Dims::tiny(), 4, 1, 21);
        (params, chunk_of(ex[0].x.clone(), vec![100, 87, 120, 93]))
    }

    #[test]
    fn mean_mode_is_deterministic_and_length_preserving() {
        let (params, x) = setup();
        let a = translate_chunk(&x, &params, &TranslateOptions { seed: 1, ..Default::default() }).unwrap();
        let b = translate_chunk(&x, &params, &TranslateOptions { seed: 99, ..Default::default() }).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ecg_mean.len(), 400);
        assert_eq!(a.pp_lengths_used, vec![100, 87, 120, 93]);
        assert!(a.ecg_samples.is_none());
        for row in &a.attention {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn output_is_denormalized_interval_by_interval() {
        let (params, x) = setup();
        let t = translate_chunk(&x, &params, &TranslateOptions::default()).unwrap();
        let first = &t.per_interval_mean[0];
        assert!((t.ecg_mean.samples()[0] - (first[0] * 2.0 + 0.5)).abs() < 1e-12);
        assert!((t.ecg_mean.samples()[99] - (first[89] * 2.0 + 0.5)).abs() < 1e-12);
        let second = &t.per_interval_mean[1];
        assert!((t.ecg_mean.samples()[100] - (second[0] * 2.0 + 0.5)).abs() < 1e-12);
        let own = TranslateOptions { output_normalization: Some(Normalization::IDENTITY), ..Default::default() };
        let raw = translate_chunk(&x, &params, &own).unwrap();
        assert_eq!(raw.ecg_mean.samples()[0], first[0]);
    }

    #[test]
    fn zero_noise_draws_equal_the_mean() {
        let (params, x) = setup();
        let mut opts = TranslateOptions { mode: Mode::Sample(5), seed: 4, ..Default::default() };
        opts.model.noise_scale = 0.0;
        let t = translate_chunk(&x, &params, &opts).unwrap();
        for d in t.ecg_samples.as_ref().unwrap() {
            assert_eq!(d.as_slice(), t.ecg_mean.samples());
        }
    }

    #[test]
    fn draws_are_reproducible_and_distinct() {
        let (params, x) = setup();
        let opts = TranslateOptions { mode: Mode::Sample(3), seed: 4, ..Default::default() };
        let a = translate_chunk(&x, &params, &opts).unwrap();
        let b = translate_chunk(&x, &params, &opts).unwrap();
        assert_eq!(a, b);
        let d = a.ecg_samples.unwrap();
        assert_ne!(d[0], d[1]);
    }

    #[test]
    fn non_finite_parameters_are_rejected() {
        let (mut params, x) = setup();
        params.get_mut(Param::EmitB1).data[0] = f64::NAN;
        assert!(translate_chunk(&x, &params, &TranslateOptions::default()).is_err());
    }

    fn with_draws(mean: Vec<f64>, draws: Vec<Vec<f64>>) -> Translation {
        Translation {
            chunk_id: "c".into(),
            ecg_mean: Waveform::new(mean, 125.0, Channel::Ecg).unwrap(),
            ecg_samples: Some(draws),
            per_interval_mean: vec![],
            pp_lengths_used: vec![],
            attention: vec![],
        }
    }

    #[test]
    fn identical_draws_give_zero_width() {
        let mean = vec![0.1, -0.3, 0.7];
        let (lo, hi) = uncertainty_band(&with_draws(mean.clone(), vec![mean.clone(); 25])).unwrap();
        assert_eq!(lo.samples(), mean.as_slice());
        assert_eq!(hi.samples(), mean.as_slice());
    }

    #[test]
    fn alternating_draws_match_sorted_percentiles() {
        let mean = vec![0.0, 1.0, -2.0, 0.5];
        let delta = 0.3;
        let draws: Vec<Vec<f64>> = (0..30)
            .map(|k| mean.iter().map(|m| if k % 2 == 0 { m + delta } else { m - delta }).collect())
            .collect();
        let t = with_draws(mean.clone(), draws.clone());
        let (lo, hi) = uncertainty_band(&t).unwrap();
        for i in 0..mean.len() {
            let mut col: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            col.sort_by(|a, b| a.partial_cmp(b).unwrap());
            // Oracle: interpolate between the two order statistics around rank p (n - 1).
            let pick = |p: f64| {
                let r = p * 29.0;
                let (a, b) = (col[r as usize], col[(r as usize + 1).min(29)]);
                a + (r - r.trunc()) * (b - a)
            };
            assert!((lo.samples()[i] - pick(0.05)).abs() < 1e-12);
            assert!((hi.samples()[i] - pick(0.95)).abs() < 1e-12);
            assert!((hi.samples()[i] - lo.samples()[i] - 2.0 * delta).abs() < 1e-12);
            assert!(lo.samples()[i] <= mean[i] && mean[i] <= hi.samples()[i]);
        }
    }

    #[test]
    fn evaluation_lines_up_reference_and_translation() {
        use crate::dataset::Chunk;
        use crate::signals::io::RecordLabel;
        let (params, x) = setup();
        let mut ecg = x.clone();
        ecg.kind = IntervalKind::Rr;
        ecg.segments = x.segments.iter().map(|r| r.iter().map(|v| v * 0.5).collect()).collect();
        ecg.normalization = Some(Normalization { offset: 1.0, scale: 3.0 });
        let chunk = Chunk { id: "c".into(), record_id: "r".into(), subject: "s".into(), label: RecordLabel::Healthy, index: 0, start_s: 0.0, ppg: x, ecg };
        let reference = reference_trace(&chunk, Units::Normalized).unwrap();
        assert_eq!(reference.len(), 400);
        assert_eq!(reference[100], chunk.ecg.segments[1][0]);
        let signal = reference_trace(&chunk, Units::Signal).unwrap();
        assert!((signal[100] - (reference[100] * 3.0 + 1.0)).abs() < 1e-12);
        let (t, rec) = evaluate_chunk(&chunk, &params, &TranslateOptions::default(), Units::Signal, Cohort::Healthy).unwrap();
        assert_eq!(t.ecg_mean.len(), 400);
        let expected = crate::metrics::rmse(&signal, t.ecg_mean.samples()).unwrap();
        assert_eq!(rec.rmse_mv, expected);
    }

    #[test]
    fn too_few_draws_is_an_error() {
        let mean = vec![0.0, 1.0];
        assert!(uncertainty_band(&with_draws(mean.clone(), vec![mean.clone(); 19])).is_err());
        let mut none = with_draws(mean, vec![]);
        none.ecg_samples = None;
        assert!(uncertainty_band(&none).is_err());
    }

    #[test]
    fn sampled_band_contains_translation() {
        let (params, x) = setup();
        let mut opts = TranslateOptions { mode: Mode::Sample(30), seed: 8, ..Default::default() };
        opts.model.noise_scale = 0.05;
        let t = translate_chunk(&x, &params, &opts).unwrap();
        let (lo, hi) = uncertainty_band(&t).unwrap();
        assert_eq!(lo.len(), t.ecg_mean.len());
        assert!(lo.samples().iter().zip(hi.samples()).all(|(a, b)| a <= b));
    }
}
