//! Paired synthetic PPG/ECG records with known beat timing.
//!
//! ECG beats are sums of Gaussian bumps (P, Q, R, S, T) whose centres sit at
//! fixed fractions of the neighbouring RR intervals; the PPG is a skewed
//! pulse (fast rise, slow decay, small dicrotic bump) peaking exactly
//! `ptt_delay_s` after each R peak. AFib profiles drop the P bump and draw RR
//! intervals from a wide lognormal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{LogNormal, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::io::TruthRow;
use crate::signals::{Channel, Waveform};

/// Lowest sampling rate that still resolves the QRS complex.
pub const MIN_RATE_HZ: f64 = 50.0;
/// Log-scale spread of AFib beat intervals.
const AFIB_LOG_SIGMA: f64 = 0.25;
/// Phase (fraction of the preceding RR interval, measured back from R) of the P wave.
pub const P_WAVE_PHASE: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub mean_bpm: f64,
    /// Standard deviation of beat-to-beat interval, seconds.
    pub hr_variability: f64,
    pub afib: bool,
    /// Pulse transit time from R peak to PPG systolic peak, seconds.
    pub ptt_delay_s: f64,
    pub morphology_seed: u64,
}

impl SubjectProfile {
    pub fn healthy(mean_bpm: f64, morphology_seed: u64) -> Self {
        Self { mean_bpm, hr_variability: 0.02, afib: false, ptt_delay_s: 0.2, morphology_seed }
    }

    pub fn afib(mean_bpm: f64, morphology_seed: u64) -> Self {
        Self { mean_bpm, hr_variability: 0.02, afib: true, ptt_delay_s: 0.2, morphology_seed }
    }

    /// Draws a plausible profile: healthy subjects at 60-90 bpm, AFib at 75-110 bpm.
    pub fn random(rng: &mut impl Rng, afib: bool) -> Self {
        let bpm = if afib { rng.random_range(75.0..110.0) } else { rng.random_range(60.0..90.0) };
        Self {
            mean_bpm: bpm,
            hr_variability: rng.random_range(0.01..0.04),
            afib,
            ptt_delay_s: rng.random_range(0.15..0.3),
            morphology_seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(30.0..=220.0).contains(&self.mean_bpm) {
            return Err(Error::InvalidArgument(format!("mean_bpm {} outside [30, 220]", self.mean_bpm)));
        }
        if !(0.1..=0.4).contains(&self.ptt_delay_s) {
            return Err(Error::InvalidArgument(format!("ptt_delay_s {} outside [0.1, 0.4]", self.ptt_delay_s)));
        }
        if !(self.hr_variability >= 0.0) || !self.hr_variability.is_finite() {
            return Err(Error::InvalidArgument(format!("hr_variability {} must be >= 0", self.hr_variability)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticPair {
    pub ppg: Waveform,
    pub ecg: Waveform,
    /// Beats whose R peak falls inside the record.
    pub truth: Vec<TruthRow>,
}

#[derive(Debug, Clone, Copy)]
struct Morphology {
    p: f64,
    q: f64,
    r: f64,
    t: f64,
    rise_frac: f64,
    decay_frac: f64,
    dicrotic: f64,
}

impl Morphology {
    fn draw(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            p: rng.random_range(0.12..0.2),
            q: rng.random_range(0.05..0.15),
            r: rng.random_range(0.9..1.4),
            t: rng.random_range(0.2..0.4),
            rise_frac: rng.random_range(0.08..0.11),
            decay_frac: rng.random_range(0.2..0.28),
            dicrotic: rng.random_range(0.1..0.25),
        }
    }
}

fn bump(t: f64, centre: f64, sigma: f64) -> f64 {
    let z = (t - centre) / sigma;
    (-0.5 * z * z).exp()
}

pub fn generate_pair(profile: &SubjectProfile, duration_s: f64, rate_hz: f64, seed: u64) -> Result<SyntheticPair> {
    profile.validate()?;
    if !(duration_s >= 4.0) {
        return Err(Error::InvalidArgument(format!("duration must be at least 4 s, got {duration_s}")));
    }
    if !(rate_hz >= MIN_RATE_HZ) {
        return Err(Error::InvalidArgument(format!(
            "sample rate {rate_hz} Hz too low to resolve QRS (need >= {MIN_RATE_HZ} Hz)"
        )));
    }
    let morph = Morphology::draw(profile.morphology_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean_rr = 60.0 / profile.mean_bpm;

    let draw_rr = |rng: &mut ChaCha8Rng| -> f64 {
        let rr = if profile.afib {
            let sigma = AFIB_LOG_SIGMA.max(profile.hr_variability / mean_rr);
            rng.sample(LogNormal::new(mean_rr.ln(), sigma).expect("valid lognormal"))
        } else if profile.hr_variability > 0.0 {
            mean_rr + rng.sample(Normal::new(0.0, profile.hr_variability).expect("valid normal"))
        } else {
            mean_rr
        };
        rr.clamp(0.4 * mean_rr, 2.5 * mean_rr).max(0.25)
    };

    // one virtual beat on each side so edge beats have full neighbourhoods
    let first = 0.5 * mean_rr;
    let mut r_times = vec![first - draw_rr(&mut rng), first];
    while *r_times.last().unwrap() < duration_s + 2.0 * mean_rr {
        let next = r_times.last().unwrap() + draw_rr(&mut rng);
        r_times.push(next);
    }

    let n = (duration_s * rate_hz).round() as usize;
    let mut ecg = vec![0.0; n];
    let mut ppg = vec![0.0; n];
    for k in 1..r_times.len() - 1 {
        let r = r_times[k];
        let rr_prev = r - r_times[k - 1];
        let rr_next = r_times[k + 1] - r;
        let sys = r + profile.ptt_delay_s;
        let pulse_amp = (rr_prev / mean_rr).sqrt().clamp(0.6, 1.4);
        let rise = morph.rise_frac * mean_rr;
        let decay = morph.decay_frac * mean_rr;
        let lo = ((r - 1.5 * rr_prev).max(0.0) * rate_hz) as usize;
        let hi = (((sys + 1.5 * rr_next) * rate_hz).ceil() as usize).min(n);
        for (i, (e, p)) in ecg.iter_mut().zip(ppg.iter_mut()).enumerate().take(hi).skip(lo) {
            let t = i as f64 / rate_hz;
            if !profile.afib {
                *e += morph.p * bump(t, r - P_WAVE_PHASE * rr_prev, 0.03 * rr_prev);
            }
            *e += morph.r * bump(t, r, 0.018) - morph.q * (bump(t, r - 0.03, 0.01) + bump(t, r + 0.03, 0.01))
                + morph.t * bump(t, r + 0.35 * rr_next, 0.06 * rr_next);
            let tau = t - sys;
            let main = if tau < 0.0 { bump(tau, 0.0, rise) } else { bump(tau, 0.0, decay) };
            *p += pulse_amp * (main + morph.dicrotic * bump(tau, 0.35 * rr_next, 0.05 * rr_next));
        }
    }

    let truth = r_times[1..]
        .iter()
        .filter(|&&r| r >= 0.0 && r < duration_s)
        .enumerate()
        .map(|(beat_index, &r)| TruthRow { beat_index, r_time_s: r, systolic_time_s: r + profile.ptt_delay_s })
        .collect();
    Ok(SyntheticPair {
        ppg: Waveform::new(ppg, rate_hz, Channel::Ppg)?,
        ecg: Waveform::new(ecg, rate_hz, Channel::Ecg)?,
        truth,
    })
}
