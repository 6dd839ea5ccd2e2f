use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};

/// Pass band used for PPG records.
pub const PPG_BAND_HZ: (f64, f64) = (0.5, 8.0);
/// Pass band used for ECG records.
pub const ECG_BAND_HZ: (f64, f64) = (0.5, 40.0);

/// Normalized (a0 = 1) second-order section in transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    /// Butterworth (Q = 1/sqrt 2) high-pass, bilinear transform with prewarping.
    pub fn highpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let (cos_w, alpha) = Self::prewarp(cutoff_hz, rate_hz);
        let a0 = 1.0 + alpha;
        let k = (1.0 + cos_w) / 2.0;
        Self { b: [k / a0, -2.0 * k / a0, k / a0], a: [-2.0 * cos_w / a0, (1.0 - alpha) / a0] }
    }

    /// Butterworth (Q = 1/sqrt 2) low-pass.
    pub fn lowpass(cutoff_hz: f64, rate_hz: f64) -> Self {
        let (cos_w, alpha) = Self::prewarp(cutoff_hz, rate_hz);
        let a0 = 1.0 + alpha;
        let k = (1.0 - cos_w) / 2.0;
        Self { b: [k / a0, 2.0 * k / a0, k / a0], a: [-2.0 * cos_w / a0, (1.0 - alpha) / a0] }
    }

    fn prewarp(cutoff_hz: f64, rate_hz: f64) -> (f64, f64) {
        let w0 = 2.0 * PI * cutoff_hz / rate_hz;
        let q = std::f64::consts::FRAC_1_SQRT_2;
        (w0.cos(), w0.sin() / (2.0 * q))
    }

    /// Gain at DC.
    pub fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Filter state that makes a constant unit input produce a constant output.
    fn steady_state(&self) -> [f64; 2] {
        let h = self.dc_gain();
        [h - self.b[0], self.b[2] - self.a[1] * h]
    }

    fn run(&self, signal: &mut [f64], mut state: [f64; 2]) {
        for v in signal.iter_mut() {
            let x = *v;
            let y = self.b[0] * x + state[0];
            state[0] = self.b[1] * x - self.a[0] * y + state[1];
            state[1] = self.b[2] * x - self.a[1] * y;
            *v = y;
        }
    }
}

fn sosfilt_steady(sections: &[Biquad], signal: &mut [f64]) {
    let Some(&first) = signal.first() else { return };
    // each section starts in the steady state for the (scaled) first sample
    let mut level = first;
    for sec in sections {
        let zi = sec.steady_state();
        sec.run(signal, [zi[0] * level, zi[1] * level]);
        level *= sec.dc_gain();
    }
}

/// Forward-backward application of `sections` with odd-extension padding.
fn filtfilt(sections: &[Biquad], samples: &[f64], padlen: usize) -> Vec<f64> {
    let n = samples.len();
    let pad = padlen.min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * samples[0] - samples[i]));
    ext.extend_from_slice(samples);
    ext.extend((1..=pad).map(|i| 2.0 * samples[n - 1] - samples[n - 1 - i]));

    sosfilt_steady(sections, &mut ext);
    ext.reverse();
    sosfilt_steady(sections, &mut ext);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

/// Zero-phase band-pass: a Butterworth high-pass and low-pass section run
/// forward and backward.
pub fn bandpass_filter(w: &Waveform, low_hz: f64, high_hz: f64) -> Result<Waveform> {
    let fs = w.sample_rate_hz();
    let nyquist = fs / 2.0;
    if !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::InvalidArgument(format!(
            "band ({low_hz}, {high_hz}) Hz must satisfy 0 < low < high < {nyquist} Hz (Nyquist)"
        )));
    }
    let sections = [Biquad::highpass(low_hz, fs), Biquad::lowpass(high_hz, fs)];
    let padlen = (3.0 * fs / low_hz).ceil() as usize;
    w.with_samples(filtfilt(&sections, w.samples(), padlen))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::Channel;

    fn sine(freq: f64, secs: f64, rate: f64) -> Waveform {
        let n = (secs * rate) as usize;
        let s = (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect();
        Waveform::new(s, rate, Channel::Ecg).unwrap()
    }

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn constant_signal_is_removed() {
        let c = 3.7;
        let w = Waveform::new(vec![c; 1000], 125.0, Channel::Ecg).unwrap();
        let out = bandpass_filter(&w, 0.5, 40.0).unwrap();
        assert_eq!(out.len(), 1000);
        for &v in out.samples() {
            assert!(v.abs() < 1e-3 * c, "residual {v}");
        }
    }

    #[test]
    fn passband_sine_keeps_amplitude() {
        let w = sine(5.0, 20.0, 125.0);
        let out = bandpass_filter(&w, 0.5, 40.0).unwrap();
        let ratio = rms(out.samples()) / rms(w.samples());
        assert!((ratio - 1.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn slow_drift_is_rejected() {
        let w = sine(0.05, 200.0, 125.0);
        let out = bandpass_filter(&w, 0.5, 40.0).unwrap();
        let ratio = rms(out.samples()) / rms(w.samples());
        assert!(ratio < 0.05, "ratio {ratio}");
    }

    #[test]
    fn dc_attenuation_at_least_40_db() {
        let fs = 125.0;
        let hp = Biquad::highpass(0.5, fs);
        let lp = Biquad::lowpass(40.0, fs);
        let g = (hp.dc_gain() * lp.dc_gain()).abs().powi(2);
        assert!(g < 1e-4);
    }

    #[test]
    fn invalid_bands_are_rejected() {
        let w = sine(1.0, 4.0, 125.0);
        assert!(bandpass_filter(&w, 0.0, 10.0).is_err());
        assert!(bandpass_filter(&w, 10.0, 5.0).is_err());
        assert!(bandpass_filter(&w, 0.5, 62.5).is_err());
    }

    #[test]
    fn short_signal_does_not_panic() {
        let w = Waveform::new(vec![1.0, 2.0, 0.5], 125.0, Channel::Ppg).unwrap();
        let out = bandpass_filter(&w, 0.5, 8.0).unwrap();
        assert_eq!(out.len(), 3);
    }
}
