//! Simulated voice-coil actuator and input/render similarity metrics.

use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{rms, Cascade, PwmStream, Signal};
use crate::rng;
use crate::texture::AccelTrace;

#[derive(Debug, Error)]
pub enum ActuatorError {
    #[error("invalid actuator model: {0}")]
    InvalidModel(String),
    #[error("drive frame rate {frame_rate_hz} Hz is below twice the actuator band edge ({band_hi_hz} Hz)")]
    FrameRateTooLow { frame_rate_hz: f64, band_hi_hz: f64 },
    #[error("signal durations differ by more than 10% ({0} s vs {1} s)")]
    DurationMismatch(f64, f64),
    #[error("comparison needs at least {0} samples per signal")]
    TooShort(usize),
}

/// Linear band-pass response with gain and additive output noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ActuatorModel {
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    /// Output acceleration (m/s²) per unit duty.
    pub gain: f64,
    /// Band-pass order; a multiple of 4.
    pub order: usize,
    pub noise_floor_rms: f64,
}

impl Default for ActuatorModel {
    fn default() -> Self {
        ActuatorModel { band_lo_hz: 50.0, band_hi_hz: 500.0, gain: 20.0, order: 4, noise_floor_rms: 0.01 }
    }
}

impl ActuatorModel {
    pub fn validate(&self, rate_hz: f64) -> Result<(), ActuatorError> {
        let bad = |m: String| Err(ActuatorError::InvalidModel(m));
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return bad(format!("gain must be positive, got {}", self.gain));
        }
        if self.order < 4 || !self.order.is_multiple_of(4) {
            return bad(format!("order must be a positive multiple of 4, got {}", self.order));
        }
        if !(self.band_lo_hz > 0.0 && self.band_lo_hz < self.band_hi_hz && self.band_hi_hz < rate_hz / 2.0) {
            return bad(format!(
                "band {}-{} Hz does not fit below Nyquist of {rate_hz} Hz",
                self.band_lo_hz, self.band_hi_hz
            ));
        }
        if !(self.noise_floor_rms >= 0.0 && self.noise_floor_rms.is_finite()) {
            return bad(format!("noise floor must be non-negative, got {}", self.noise_floor_rms));
        }
        Ok(())
    }

    pub fn response(&self, rate_hz: f64) -> Cascade {
        Cascade::butterworth_bandpass(self.band_lo_hz, self.band_hi_hz, rate_hz, self.order)
    }
}

/// Render a PWM drive as actuator output acceleration.
///
/// The carrier (the pre-encoding scalar signal) is peak-normalized and
/// multiplied by the zero-order-held duty so the texture spectrum survives the
/// modulation. The product is scaled by the gain, band-passed by the actuator
/// response and summed with white Gaussian noise. The result is a single-axis
/// trace (on `ax`) at the carrier rate.
pub fn render(drive: &PwmStream, model: &ActuatorModel, carrier: &Signal, seed: u64) -> Result<AccelTrace, ActuatorError> {
    let mut out = render_noiseless(drive, model, carrier)?;
    add_noise_floor(&mut out, model, seed);
    to_trace(carrier, &out)
}

/// The deterministic part of [`render`]: everything except the output noise.
pub fn render_noiseless(drive: &PwmStream, model: &ActuatorModel, carrier: &Signal) -> Result<Vec<f64>, ActuatorError> {
    if drive.frame_rate_hz < 2.0 * model.band_hi_hz {
        return Err(ActuatorError::FrameRateTooLow { frame_rate_hz: drive.frame_rate_hz, band_hi_hz: model.band_hi_hz });
    }
    model.validate(carrier.rate_hz)?;
    let peak = carrier.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let inv_peak = if peak > 0.0 { 1.0 / peak } else { 0.0 };
    let mut response = model.response(carrier.rate_hz);
    let last = drive.frames.len().checked_sub(1);
    Ok(carrier
        .values
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let duty = last.map_or(0.0, |last| {
                let k = (i as f64 * drive.frame_rate_hz / carrier.rate_hz).floor() as usize;
                drive.frames[k.min(last)].duty
            });
            response.process(model.gain * duty * c * inv_peak)
        })
        .collect())
}

/// Add the model's white output noise, drawn from a stream derived from `seed`.
pub fn add_noise_floor(out: &mut [f64], model: &ActuatorModel, seed: u64) {
    if model.noise_floor_rms > 0.0 {
        let noise = Normal::new(0.0, model.noise_floor_rms).expect("validated noise floor");
        let mut rng = rng::derived_rng(seed, "actuator-noise", 0);
        out.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
    }
}

fn to_trace(carrier: &Signal, out: &[f64]) -> Result<AccelTrace, ActuatorError> {
    let zeros = vec![0.0; out.len()];
    AccelTrace::from_axes(carrier.t0, carrier.rate_hz, out, &zeros, &zeros)
        .map_err(|e| ActuatorError::InvalidModel(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderComparison {
    /// RMS of `s - g*r` with the least-squares gain `g`.
    pub rms_error: f64,
    /// Mean magnitude-squared coherence over 50-500 Hz.
    pub spectral_coherence_mean: f64,
    /// Pearson correlation of the 20 ms moving-RMS envelopes.
    pub envelope_correlation: f64,
}

pub const COHERENCE_SEGMENT: usize = 256;
pub const COHERENCE_BAND_HZ: (f64, f64) = (50.0, 500.0);
pub const ENVELOPE_WINDOW_S: f64 = 0.02;

/// Linear-interpolation resampling of `x` to `n` samples over the same span.
fn resample(x: &[f64], n: usize) -> Vec<f64> {
    if x.len() == n {
        return x.to_vec();
    }
    let scale = (x.len() - 1) as f64 / (n - 1).max(1) as f64;
    (0..n)
        .map(|i| {
            let pos = i as f64 * scale;
            let j = (pos.floor() as usize).min(x.len() - 2);
            let frac = pos - j as f64;
            x[j] * (1.0 - frac) + x[j + 1] * frac
        })
        .collect()
}

/// Per-bin magnitude-squared coherence from Welch averages (Hann, 50% overlap).
pub fn coherence(s: &[f64], r: &[f64], segment: usize) -> Vec<f64> {
    let hop = segment / 2;
    let window: Vec<f64> = (0..segment).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / segment as f64).cos()).collect();
    let fft = FftPlanner::new().plan_fft_forward(segment);
    let bins = segment / 2 + 1;
    let (mut pss, mut prr, mut psr) = (vec![0.0; bins], vec![0.0; bins], vec![Complex::new(0.0, 0.0); bins]);
    let mut start = 0;
    while start + segment <= s.len() {
        let spec = |x: &[f64]| {
            let mut buf: Vec<Complex<f64>> =
                x[start..start + segment].iter().zip(&window).map(|(v, w)| Complex::new(v * w, 0.0)).collect();
            fft.process(&mut buf);
            buf
        };
        let (fs, fr) = (spec(s), spec(r));
        for k in 0..bins {
            pss[k] += fs[k].norm_sqr();
            prr[k] += fr[k].norm_sqr();
            psr[k] += fs[k] * fr[k].conj();
        }
        start += hop;
    }
    (0..bins)
        .map(|k| {
            let den = pss[k] * prr[k];
            if den > 0.0 {
                (psr[k].norm_sqr() / den).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect()
}

fn moving_rms(x: &[f64], window: usize) -> Vec<f64> {
    let squared: Vec<f64> = x.iter().map(|v| v * v).collect();
    crate::dsp::moving_average(&squared, window)
        .expect("odd window")
        .into_iter()
        .map(f64::sqrt)
        .collect()
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa > 0.0 && sbb > 0.0 {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    } else if a == b {
        1.0
    } else {
        0.0
    }
}

/// Compare a reference scalar signal `s` with a rendered signal `r`.
pub fn compare_render(s: &Signal, r: &Signal) -> Result<RenderComparison, ActuatorError> {
    if s.len() < COHERENCE_SEGMENT || r.len() < COHERENCE_SEGMENT {
        return Err(ActuatorError::TooShort(COHERENCE_SEGMENT));
    }
    let (ds, dr) = (s.duration_s(), r.duration_s());
    if (ds - dr).abs() > 0.1 * ds.max(dr) {
        return Err(ActuatorError::DurationMismatch(ds, dr));
    }
    let n = s.len().max(r.len());
    let rate = if s.len() >= r.len() { s.rate_hz } else { r.rate_hz };
    let sv = resample(&s.values, n);
    let rv = resample(&r.values, n);

    let srr: f64 = sv.iter().zip(&rv).map(|(a, b)| a * b).sum();
    let rr: f64 = rv.iter().map(|b| b * b).sum();
    let g = if rr > 0.0 { srr / rr } else { 0.0 };
    let resid: Vec<f64> = sv.iter().zip(&rv).map(|(a, b)| a - g * b).collect();
    let rms_error = rms(&resid);

    let coh = coherence(&sv, &rv, COHERENCE_SEGMENT);
    let df = rate / COHERENCE_SEGMENT as f64;
    let in_band: Vec<f64> = coh
        .iter()
        .enumerate()
        .filter(|(k, _)| {
            let f = *k as f64 * df;
            f >= COHERENCE_BAND_HZ.0 && f <= COHERENCE_BAND_HZ.1
        })
        .map(|(_, c)| *c)
        .collect();
    let spectral_coherence_mean =
        if in_band.is_empty() { 0.0 } else { in_band.iter().sum::<f64>() / in_band.len() as f64 };

    let mut window = (ENVELOPE_WINDOW_S * rate).round().max(1.0) as usize;
    if window.is_multiple_of(2) {
        window += 1;
    }
    let envelope_correlation = pearson(&moving_rms(&sv, window), &moving_rms(&rv, window));

    Ok(RenderComparison { rms_error, spectral_coherence_mean, envelope_correlation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::PwmFrame;
    use rand_distr::StandardNormal;

    fn constant_drive(duty: f64, frames: usize) -> PwmStream {
        PwmStream {
            frame_rate_hz: 1000.0,
            frames: (0..frames).map(|k| PwmFrame { t: k as f64 / 1000.0, duty }).collect(),
        }
    }

    fn sine(freq: f64, rate: f64, n: usize) -> Signal {
        Signal::new(rate, (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect())
    }

    fn noise(seed: u64, n: usize, rate: f64) -> Signal {
        let mut r = rng::rng_from(seed);
        Signal::new(rate, (0..n).map(|_| StandardNormal.sample(&mut r)).collect())
    }

    #[test]
    fn zero_drive_yields_noise_floor() {
        let m = ActuatorModel::default();
        let carrier = sine(200.0, 2000.0, 8000);
        let out = render(&constant_drive(0.0, 4000), &m, &carrier, 3).unwrap();
        let r = rms(&out.axis(0));
        assert!((r - m.noise_floor_rms).abs() <= 0.2 * m.noise_floor_rms);
        let quiet = ActuatorModel { noise_floor_rms: 0.0, ..m };
        let out = render(&constant_drive(0.0, 4000), &quiet, &carrier, 3).unwrap();
        assert!(out.axis(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sine_carrier_at_constant_duty() {
        let m = ActuatorModel { noise_floor_rms: 0.0, ..Default::default() };
        let d = 0.4;
        let carrier = sine(200.0, 2000.0, 8000);
        let out = render(&constant_drive(d, 4000), &m, &carrier, 0).unwrap();
        let w = |x: f64| (PI * x / 2000.0).tan();
        let band = 1.0 / (1.0 + (w(50.0) / w(200.0)).powi(4)).sqrt() / (1.0 + (w(200.0) / w(500.0)).powi(4)).sqrt();
        // The carrier is peak-normalized, and its sampled peak is sin(72°), not 1.
        let peak = carrier.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let expect = m.gain * d * band / 2f64.sqrt() / peak;
        let got = rms(&out.axis(0)[2000..]);
        assert!((got - expect).abs() <= 0.05 * expect, "{got} vs {expect}");
    }

    #[test]
    fn gain_linearity() {
        let m = ActuatorModel { noise_floor_rms: 0.0, ..Default::default() };
        let m2 = ActuatorModel { gain: 2.0 * m.gain, ..m.clone() };
        let c = noise(5, 4000, 2000.0);
        let a = rms(&render(&constant_drive(0.3, 2000), &m, &c, 0).unwrap().axis(0));
        let b = rms(&render(&constant_drive(0.3, 2000), &m2, &c, 0).unwrap().axis(0));
        assert!((b - 2.0 * a).abs() <= 1e-6 * b);
    }

    #[test]
    fn low_frame_rate_rejected() {
        let drive = PwmStream { frame_rate_hz: 500.0, frames: vec![] };
        assert!(matches!(
            render(&drive, &ActuatorModel::default(), &sine(100.0, 2000.0, 100), 0),
            Err(ActuatorError::FrameRateTooLow { .. })
        ));
    }

    #[test]
    fn self_comparison_is_identity() {
        let s = noise(11, 4000, 2000.0);
        let c = compare_render(&s, &s).unwrap();
        assert!(c.rms_error.abs() < 1e-12);
        assert!((c.spectral_coherence_mean - 1.0).abs() < 1e-12);
        assert!((c.envelope_correlation - 1.0).abs() < 1e-12);
        let doubled = Signal { values: s.values.iter().map(|v| 2.0 * v).collect(), ..s.clone() };
        assert!(compare_render(&s, &doubled).unwrap().rms_error < 1e-12);
    }

    #[test]
    fn coherence_values_bounded() {
        let s = noise(1, 3000, 2000.0);
        let r = noise(2, 3000, 2000.0);
        assert!(coherence(&s.values, &r.values, 256).iter().all(|c| (0.0..=1.0).contains(c)));
    }

    #[test]
    fn independent_noise_is_dissimilar() {
        // 200 seeds of 4 s traces; at least 95% must show low similarity.
        let mut ok = 0;
        for seed in 0..200u64 {
            let s = noise(2 * seed, 8000, 2000.0);
            let r = noise(2 * seed + 1, 8000, 2000.0);
            let c = compare_render(&s, &r).unwrap();
            if c.spectral_coherence_mean < 0.2 && c.envelope_correlation.abs() < 0.2 {
                ok += 1;
            }
        }
        assert!(ok >= 190, "{ok}/200");
    }

    #[test]
    fn duration_mismatch_and_resampling() {
        let s = noise(1, 4000, 2000.0);
        let r = noise(2, 2000, 2000.0);
        assert!(matches!(compare_render(&s, &r), Err(ActuatorError::DurationMismatch(..))));
        let short = Signal::new(2000.0, resample(&s.values, 3800));
        assert!(compare_render(&s, &short).is_ok());
        assert!(matches!(compare_render(&Signal::new(2000.0, vec![1.0; 10]), &s), Err(ActuatorError::TooShort(_))));
    }
}
