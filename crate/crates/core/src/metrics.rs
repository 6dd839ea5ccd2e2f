//! Similarity metrics between a reference ECG and its translation, and
//! per-cohort aggregation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_lengths(y: &[f64], yhat: &[f64], min: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!("lengths differ: {} vs {}", y.len(), yhat.len())));
    }
    if y.len() < min {
        return Err(Error::InvalidArgument(format!("need at least {min} samples, got {}", y.len())));
    }
    Ok(())
}

/// Pearson correlation coefficient. Errors when either input is constant,
/// since the coefficient is undefined there.
pub fn pearson(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat, 2)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mh = yhat.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in y.iter().zip(yhat) {
        let (da, db) = (a - my, b - mh);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidArgument("correlation is undefined for a constant signal".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Root mean squared error, in the units of the inputs.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat, 1)?;
    let ss: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / y.len() as f64).sqrt())
}

/// `20 log10(||y||^2 / ||y - yhat||^2)`.
///
/// Note the factor 20 on a ratio of squared norms; the usual power-ratio
/// convention would use 10, so values here are twice the conventional dB
/// figure. A zero residual gives `+inf`; a zero reference with a nonzero
/// residual gives `-inf`.
pub fn snr_db(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check_lengths(y, yhat, 1)?;
    let signal: f64 = y.iter().map(|v| v * v).sum();
    let residual: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    if signal == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(20.0 * (signal / residual).log10())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Healthy,
    Afib,
    Noisy,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::Healthy, Cohort::Afib, Cohort::Noisy];
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Cohort::Healthy => "healthy",
            Cohort::Afib => "afib",
            Cohort::Noisy => "noisy",
        })
    }
}

impl std::str::FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "healthy" => Ok(Cohort::Healthy),
            "afib" => Ok(Cohort::Afib),
            "noisy" => Ok(Cohort::Noisy),
            other => Err(Error::InvalidArgument(format!("unknown cohort {other:?} (expected healthy, afib or noisy)"))),
        }
    }
}

/// Metrics for one chunk; also one row of the report CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub chunk_id: String,
    pub subject: String,
    pub cohort: Cohort,
    /// `NaN` when the correlation is undefined (constant chunk).
    pub pearson: f64,
    pub rmse_mv: f64,
    pub snr_db: f64,
}

impl MetricRecord {
    /// Computes all three metrics. An undefined correlation is stored as `NaN`
    /// and excluded from aggregation.
    pub fn compute(chunk_id: &str, subject: &str, cohort: Cohort, y: &[f64], yhat: &[f64]) -> Result<Self> {
        let rho = match pearson(y, yhat) {
            Ok(r) => r,
            Err(Error::InvalidArgument(_)) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(Self {
            chunk_id: chunk_id.to_string(),
            subject: subject.to_string(),
            cohort,
            pearson: rho,
            rmse_mv: rmse(y, yhat)?,
            snr_db: snr_db(y, yhat)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Number of finite values that entered the summary.
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let v: Vec<f64> = values.into_iter().filter(|x| x.is_finite()).collect();
        if v.is_empty() {
            return Self { mean: f64::NAN, std: f64::NAN, count: 0 };
        }
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        Self { mean, std: var.sqrt(), count: v.len() }
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.3} ± {:.3}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub cohort: Cohort,
    pub chunks: usize,
    pub pearson: MeanStd,
    pub rmse_mv: MeanStd,
    pub snr_db: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    /// One entry per cohort present in the input, in healthy, afib, noisy order.
    pub cohorts: Vec<CohortSummary>,
}

pub const REPORT_FOOTER: &str =
    "snr_db = 20*log10(||y||^2/||y-yhat||^2); the factor 20 on squared norms doubles the conventional power-ratio dB value";

fn summarize(cohort: Cohort, records: &[&MetricRecord]) -> CohortSummary {
    CohortSummary {
        cohort,
        chunks: records.len(),
        pearson: MeanStd::of(records.iter().map(|r| r.pearson)),
        rmse_mv: MeanStd::of(records.iter().map(|r| r.rmse_mv)),
        snr_db: MeanStd::of(records.iter().map(|r| r.snr_db)),
    }
}

/// Mean and population standard deviation of every metric, per cohort.
/// Non-finite values (undefined correlation, infinite SNR) are left out of
/// the summaries; `count` records how many entered.
pub fn aggregate(records: &[MetricRecord]) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no metric records to aggregate".into()));
    }
    let cohorts = Cohort::ALL
        .iter()
        .filter_map(|&c| {
            let subset: Vec<&MetricRecord> = records.iter().filter(|r| r.cohort == c).collect();
            (!subset.is_empty()).then(|| summarize(c, &subset))
        })
        .collect();
    Ok(Report { cohorts })
}

impl Report {
    pub fn cohort(&self, c: Cohort) -> Option<&CohortSummary> {
        self.cohorts.iter().find(|s| s.cohort == c)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:>6}  {:<16} {:<16} {:<16}", "cohort", "chunks", "pearson", "rmse_mv", "snr_db")?;
        for s in &self.cohorts {
            writeln!(
                f,
                "{:<8} {:>6}  {:<16} {:<16} {:<16}",
                s.cohort.to_string(),
                s.chunks,
                s.pearson.to_string(),
                s.rmse_mv.to_string(),
                s.snr_db.to_string()
            )?;
        }
        write!(f, "note: {REPORT_FOOTER}")
    }
}

/// Writes the per-chunk rows (`chunk_id,subject,cohort,pearson,rmse_mv,snr_db`).
pub fn write_records_csv(path: &Path, records: &[MetricRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.into()))?;
    for r in records {
        w.serialize(r).map_err(|e| Error::Io(e.into()))?;
    }
    w.flush()?;
    Ok(())
}

/// Column order of per-chunk metric CSVs.
pub const RECORD_COLUMNS: [&str; 6] = ["chunk_id", "subject", "cohort", "pearson", "rmse_mv", "snr_db"];

pub fn read_records_csv(path: &Path) -> Result<Vec<MetricRecord>> {
    let malformed = |msg: String| Error::MalformedCsv { path: path.display().to_string(), msg };
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(e.into()),
        _ => malformed(e.to_string()),
    })?;
    let header = r.headers().map_err(|e| malformed(e.to_string()))?;
    if header.iter().ne(RECORD_COLUMNS) {
        return Err(malformed(format!("expected header {}, found {}", RECORD_COLUMNS.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    r.deserialize().map(|row| row.map_err(|e| malformed(e.to_string()))).collect()
}

/// Writes the aggregate report as CSV, one row per cohort and metric, with
/// the SNR convention as a trailing comment line.
pub fn write_report_csv(path: &Path, report: &Report) -> Result<()> {
    let mut out = String::from("cohort,metric,mean,std,count\n");
    for s in &report.cohorts {
        for (name, m) in [("pearson", s.pearson), ("rmse_mv", s.rmse_mv), ("snr_db", s.snr_db)] {
            out.push_str(&format!("{},{name},{},{},{}\n", s.cohort, m.mean, m.std, m.count));
        }
    }
    out.push_str(&format!("# {REPORT_FOOTER}\n"));
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn pearson_examples() {
        assert!((pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn pearson_matches_covariance_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (y, h) = (random_vec(&mut rng, 100), random_vec(&mut rng, 100));
        // Textbook form: cov(y, h) / (std(y) std(h)) with 1/(n-1) normalization throughout.
        let n = 100.0;
        let my = y.iter().sum::<f64>() / n;
        let mh = h.iter().sum::<f64>() / n;
        let cov = y.iter().zip(&h).map(|(a, b)| (a - my) * (b - mh)).sum::<f64>() / (n - 1.0);
        let sy = (y.iter().map(|a| (a - my).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let sh = (h.iter().map(|b| (b - mh).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((pearson(&y, &h).unwrap() - cov / (sy * sh)).abs() < 1e-12);
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[0.0, 0.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(rmse(&[0.0], &[]).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (y, h) = (random_vec(&mut rng, 57), random_vec(&mut rng, 57));
        let ms: f64 = y.iter().zip(&h).map(|(a, b)| (a - b).powi(2) / 57.0).sum();
        assert!((rmse(&y, &h).unwrap() - ms.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn snr_examples() {
        assert!(snr_db(&[1.0, 0.0], &[0.0, 0.0]).unwrap().abs() < 1e-12);
        let tenth = 0.1f64.sqrt();
        assert!((snr_db(&[1.0], &[1.0 - tenth]).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(snr_db(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), f64::INFINITY);
        assert_eq!(snr_db(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), f64::NEG_INFINITY);
    }

    #[test]
    fn snr_decreases_with_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..500).map(|i| (i as f64 * 0.1).sin()).collect();
        let base = random_vec(&mut rng, 500);
        let snrs: Vec<f64> = [0.01, 0.05, 0.1, 0.3, 1.0]
            .iter()
            .map(|&s| {
                let h: Vec<f64> = y.iter().zip(&base).map(|(a, e)| a + s * e).collect();
                snr_db(&y, &h).unwrap()
            })
            .collect();
        assert!(snrs.windows(2).all(|w| w[1] < w[0]), "{snrs:?}");
    }

    fn record(cohort: Cohort, rho: f64) -> MetricRecord {
        MetricRecord { chunk_id: format!("c{rho}"), subject: "s".into(), cohort, pearson: rho, rmse_mv: 0.1, snr_db: 10.0 }
    }

    #[test]
    fn aggregation_examples() {
        let one = aggregate(&[record(Cohort::Healthy, 0.8)]).unwrap();
        assert_eq!(one.cohorts[0].pearson.std, 0.0);
        let two = aggregate(&[record(Cohort::Healthy, 0.8), record(Cohort::Healthy, 0.9), record(Cohort::Afib, 0.1)]).unwrap();
        let h = two.cohort(Cohort::Healthy).unwrap();
        assert!((h.pearson.mean - 0.85).abs() < 1e-12);
        assert!((h.pearson.std - 0.05).abs() < 1e-12);
        assert_eq!(h.chunks, 2);
        assert_eq!(two.cohort(Cohort::Afib).unwrap().pearson.mean, 0.1);
        assert!(two.cohort(Cohort::Noisy).is_none());
        assert!(aggregate(&[]).is_err());
        assert!(two.to_string().contains("factor 20"));
    }

    #[test]
    fn nan_correlation_is_left_out() {
        let r = aggregate(&[record(Cohort::Noisy, f64::NAN), record(Cohort::Noisy, 0.5)]).unwrap();
        let s = r.cohort(Cohort::Noisy).unwrap();
        assert_eq!((s.pearson.mean, s.pearson.count, s.chunks), (0.5, 1, 2));
    }

    #[test]
    fn records_round_trip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let rows = vec![record(Cohort::Afib, 0.25), record(Cohort::Healthy, -0.5)];
        write_records_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("chunk_id,subject,cohort,pearson,rmse_mv,snr_db\n"));
        assert_eq!(read_records_csv(&path).unwrap(), rows);
        let report = dir.path().join("r.csv");
        write_report_csv(&report, &aggregate(&rows).unwrap()).unwrap();
        assert!(std::fs::read_to_string(&report).unwrap().contains("afib,pearson,0.25,0,1"));
    }

    proptest! {
        #[test]
        fn pearson_affine_invariance(seed in any::<u64>(), a in 0.01f64..100.0, b in -50.0f64..50.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, h) = (random_vec(&mut rng, 40), random_vec(&mut rng, 40));
            let t: Vec<f64> = h.iter().map(|v| a * v + b).collect();
            prop_assert!((pearson(&y, &h).unwrap() - pearson(&y, &t).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn rmse_triangle(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, m, h) = (random_vec(&mut rng, 30), random_vec(&mut rng, 30), random_vec(&mut rng, 30));
            prop_assert!(rmse(&y, &h).unwrap() <= rmse(&y, &m).unwrap() + rmse(&m, &h).unwrap() + 1e-12);
        }

        #[test]
        fn snr_scale_invariance(seed in any::<u64>(), k in prop_oneof![-10.0f64..-0.1, 0.1f64..10.0]) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (y, h) = (random_vec(&mut rng, 30), random_vec(&mut rng, 30));
            let ys: Vec<f64> = y.iter().map(|v| k * v).collect();
            let hs: Vec<f64> = h.iter().map(|v| k * v).collect();
            prop_assert!((snr_db(&y, &h).unwrap() - snr_db(&ys, &hs).unwrap()).abs() < 1e-9);
        }
    }
}
