//! Control pipeline: band-pass filtering, 3-to-1 reduction, limiting, PWM
//! encoding and channel routing.

mod biquad;
mod pipeline;

use std::io::Write;
use std::path::Path;

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::texture::AccelTrace;

pub use biquad::{Biquad, Cascade};
pub use pipeline::{process_trace, Pipeline, PipelineRun, StreamOutput};

/// Order of the pipeline's band-pass (two biquads).
pub const PIPELINE_FILTER_ORDER: usize = 4;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("invalid pipeline configuration: {0}")]
    InvalidConfig(String),
    #[error("empty input")]
    Empty,
    #[error("frame rates differ: {0} Hz vs {1} Hz")]
    FrameRateMismatch(f64, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Uniformly sampled scalar series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal {
    pub rate_hz: f64,
    pub t0: f64,
    pub values: Vec<f64>,
}

impl Signal {
    pub fn new(rate_hz: f64, values: Vec<f64>) -> Self {
        Signal { rate_hz, t0: 0.0, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.values.len() as f64 / self.rate_hz
    }

    pub fn rms(&self) -> f64 {
        rms(&self.values)
    }

    pub fn power(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().map(|v| v * v).sum::<f64>() / self.values.len() as f64
        }
    }
}

pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    (xs.iter().map(|v| v * v).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Magnitude,
    Dft321,
}

impl std::str::FromStr for Reduction {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "magnitude" => Ok(Reduction::Magnitude),
            "dft321" => Ok(Reduction::Dft321),
            other => Err(format!("unknown reduction '{other}' (expected magnitude or dft321)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub hp_cutoff_hz: f64,
    pub lp_cutoff_hz: f64,
    pub reduction: Reduction,
    /// Limiter ceiling in m/s².
    pub limiter_ceiling: f64,
    /// Duty per m/s².
    pub scale_k: f64,
    pub duty_max: f64,
    pub frame_rate_hz: f64,
    /// Block length of the streaming DFT321 reducer.
    pub dft_block: usize,
}

/// Scale factor placing the peak pooled duty of the P60 texture (default
/// synthesis parameters, both variants) at 0.9 of `duty_max`; reproduced by
/// [`calibrate_scale_k`].
pub const DEFAULT_SCALE_K: f64 = 0.168_969_403_667_868_78;

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hp_cutoff_hz: 50.0,
            lp_cutoff_hz: 500.0,
            reduction: Reduction::Magnitude,
            limiter_ceiling: 12.0,
            scale_k: DEFAULT_SCALE_K,
            duty_max: 1.0,
            frame_rate_hz: 1000.0,
            dft_block: 256,
        }
    }
}

impl PipelineConfig {
    /// Checks the configuration against the sampling rate it will run at.
    pub fn validate(&self, rate_hz: f64) -> Result<(), DspError> {
        let bad = |m: String| Err(DspError::InvalidConfig(m));
        if !(self.hp_cutoff_hz > 0.0 && self.hp_cutoff_hz < self.lp_cutoff_hz) {
            return bad(format!("need 0 < hp_cutoff ({}) < lp_cutoff ({})", self.hp_cutoff_hz, self.lp_cutoff_hz));
        }
        if self.lp_cutoff_hz >= rate_hz / 2.0 {
            return bad(format!("lp_cutoff {} Hz is not below Nyquist ({} Hz)", self.lp_cutoff_hz, rate_hz / 2.0));
        }
        if !(self.scale_k > 0.0 && self.scale_k.is_finite()) {
            return bad(format!("scale_k must be positive, got {}", self.scale_k));
        }
        if !(self.duty_max > 0.0 && self.duty_max <= 1.0) {
            return bad(format!("duty_max must lie in (0, 1], got {}", self.duty_max));
        }
        if !(self.limiter_ceiling > 0.0) {
            return bad(format!("limiter ceiling must be positive, got {}", self.limiter_ceiling));
        }
        if !(self.frame_rate_hz > 0.0 && self.frame_rate_hz <= rate_hz) {
            return bad(format!("frame rate {} Hz must lie in (0, {rate_hz}]", self.frame_rate_hz));
        }
        if self.dft_block < 2 {
            return bad("dft_block must be at least 2".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PwmFrame {
    pub t: f64,
    pub duty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PwmStream {
    pub frame_rate_hz: f64,
    pub frames: Vec<PwmFrame>,
}

impl PwmStream {
    pub fn zeros_like(other: &PwmStream) -> Self {
        PwmStream {
            frame_rate_hz: other.frame_rate_hz,
            frames: other.frames.iter().map(|f| PwmFrame { t: f.t, duty: 0.0 }).collect(),
        }
    }

    pub fn duties(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.duty).collect()
    }

    pub fn mean_duty(&self) -> f64 {
        if self.frames.is_empty() {
            return 0.0;
        }
        self.frames.iter().map(|f| f.duty).sum::<f64>() / self.frames.len() as f64
    }

    pub fn max_duty(&self) -> f64 {
        self.frames.iter().map(|f| f.duty).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t,duty")?;
        for f in &self.frames {
            writeln!(w, "{},{}", f.t, f.duty)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), DspError> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// Per-axis Butterworth band-pass with the configured cutoffs.
pub fn bandpass_filter(trace: &AccelTrace, cfg: &PipelineConfig) -> Result<AccelTrace, DspError> {
    cfg.validate(trace.rate_hz())?;
    let rate = trace.rate_hz();
    let mut out = Vec::with_capacity(3);
    for axis in 0..3 {
        let mut c = Cascade::butterworth_bandpass(cfg.hp_cutoff_hz, cfg.lp_cutoff_hz, rate, PIPELINE_FILTER_ORDER);
        out.push(c.process_slice(&trace.axis(axis)));
    }
    AccelTrace::from_axes(trace.start_time(), rate, &out[0], &out[1], &out[2])
        .map_err(|e| DspError::InvalidConfig(e.to_string()))
}

/// Collapse three axes onto one while preserving total spectral energy.
///
/// The output magnitude spectrum is the root-sum-square of the axis spectra;
/// the phase is taken from the spectrum of the axis sum, which keeps the
/// result real.
pub fn dft321(ax: &[f64], ay: &[f64], az: &[f64], planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let n = ax.len();
    if n == 0 {
        return Vec::new();
    }
    let fft = planner.plan_fft_forward(n);
    let spectrum = |x: &[f64]| {
        let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        buf
    };
    let (sx, sy, sz) = (spectrum(ax), spectrum(ay), spectrum(az));
    let mut out: Vec<Complex<f64>> = (0..n)
        .map(|k| {
            let mag = (sx[k].norm_sqr() + sy[k].norm_sqr() + sz[k].norm_sqr()).sqrt();
            let sum = sx[k] + sy[k] + sz[k];
            let phase = sum.im.atan2(sum.re);
            Complex::from_polar(mag, phase)
        })
        .collect();
    planner.plan_fft_inverse(n).process(&mut out);
    out.iter().map(|c| c.re / n as f64).collect()
}

pub fn reduce_3to1(trace: &AccelTrace, method: Reduction) -> Result<Signal, DspError> {
    if trace.is_empty() {
        return Err(DspError::Empty);
    }
    let values = match method {
        Reduction::Magnitude => trace.magnitude(),
        Reduction::Dft321 => dft321(&trace.axis(0), &trace.axis(1), &trace.axis(2), &mut FftPlanner::new()),
    };
    Ok(Signal { rate_hz: trace.rate_hz(), t0: trace.start_time(), values })
}

/// Sign-preserving clamp of one value to `[-ceiling, ceiling]`; NaN maps to 0.
#[inline]
pub fn limit_value(x: f64, ceiling: f64) -> f64 {
    if x.is_nan() {
        0.0
    } else {
        x.clamp(-ceiling, ceiling)
    }
}

pub fn limit(signal: &[f64], ceiling: f64) -> Result<Vec<f64>, DspError> {
    if !(ceiling > 0.0) {
        return Err(DspError::InvalidConfig(format!("limiter ceiling must be positive, got {ceiling}")));
    }
    Ok(signal.iter().map(|&x| limit_value(x, ceiling)).collect())
}

/// Pointwise duty `min(scale_k * |y|, duty_max)`, mean-pooled per frame.
pub fn encode_pwm(signal: &Signal, cfg: &PipelineConfig) -> Result<PwmStream, DspError> {
    if !(cfg.scale_k > 0.0) {
        return Err(DspError::InvalidConfig(format!("scale_k must be positive, got {}", cfg.scale_k)));
    }
    if !(cfg.frame_rate_hz > 0.0 && cfg.frame_rate_hz <= signal.rate_hz) {
        return Err(DspError::InvalidConfig(format!(
            "frame rate {} Hz must lie in (0, {}]",
            cfg.frame_rate_hz, signal.rate_hz
        )));
    }
    let mut enc = pipeline::FrameEncoder::new(cfg, signal.rate_hz, signal.t0);
    let mut frames = Vec::new();
    for &y in &signal.values {
        enc.push(y, &mut frames);
    }
    enc.flush(&mut frames);
    Ok(PwmStream { frame_rate_hz: cfg.frame_rate_hz, frames })
}

/// Index sensor drives the left actuator, thumb sensor the right one. A
/// missing thumb stream yields an all-zero right channel.
pub fn route_channels(index: &PwmStream, thumb: Option<&PwmStream>) -> Result<(PwmStream, PwmStream), DspError> {
    match thumb {
        Some(t) if t.frame_rate_hz != index.frame_rate_hz => {
            Err(DspError::FrameRateMismatch(index.frame_rate_hz, t.frame_rate_hz))
        }
        Some(t) => Ok((index.clone(), t.clone())),
        None => Ok((index.clone(), PwmStream::zeros_like(index))),
    }
}

/// Centered moving average; near the edges the window is truncated.
pub fn moving_average(signal: &[f64], window: usize) -> Result<Vec<f64>, DspError> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(DspError::InvalidConfig(format!("window must be odd and >= 1, got {window}")));
    }
    let half = window / 2;
    let n = signal.len();
    Ok((0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(n);
            signal[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect())
}

/// Scale factor putting the peak frame duty over `calibration_traces` at
/// `0.9 * duty_max`. Traces should all share one sampling rate.
pub fn calibrate_scale_k(calibration_traces: &[&AccelTrace], cfg: &PipelineConfig) -> Result<f64, DspError> {
    // The limiter bounds |y| by the ceiling, so this probe scale never saturates.
    let probe_k = 1.0 / cfg.limiter_ceiling;
    let probe = PipelineConfig { scale_k: probe_k, duty_max: 1.0, ..cfg.clone() };
    let mut peak = 0.0f64;
    for trace in calibration_traces {
        let run = process_trace(trace, &probe, None)?;
        peak = peak.max(run.pwm.max_duty() / probe_k);
    }
    if !(peak > 0.0) {
        return Err(DspError::InvalidConfig("calibration traces produce no drive".into()));
    }
    Ok(0.9 * cfg.duty_max / peak)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::texture::{synth_texture, Ladder, SynthParams, TextureBank};
    use std::f64::consts::PI;

    fn sine_trace(freq: f64, amp: f64, rate: f64, secs: f64) -> AccelTrace {
        let n = (rate * secs) as usize;
        let x: Vec<f64> = (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate).sin()).collect();
        let z = vec![0.0; n];
        AccelTrace::from_axes(0.0, rate, &x, &z, &z).unwrap()
    }

    fn steady_amplitude(xs: &[f64], skip: usize) -> f64 {
        rms(&xs[skip..]) * 2f64.sqrt()
    }

    // Prewarped analog Butterworth magnitude for the 50-500 Hz pipeline band.
    fn analytic_gain(f: f64, rate: f64) -> f64 {
        let w = |x: f64| (PI * x / rate).tan();
        let hp = 1.0 / (1.0 + (w(50.0) / w(f)).powi(4)).sqrt();
        let lp = 1.0 / (1.0 + (w(f) / w(500.0)).powi(4)).sqrt();
        hp * lp
    }

    #[test]
    fn passes_200hz_and_rejects_10hz() {
        let cfg = PipelineConfig::default();
        let out = bandpass_filter(&sine_trace(200.0, 1.0, 2000.0, 3.0), &cfg).unwrap();
        let a = steady_amplitude(&out.axis(0), 2000);
        let expect = analytic_gain(200.0, 2000.0);
        assert!((a - expect).abs() < 2e-3, "{a} vs {expect}");
        assert!((a - 1.0).abs() <= 0.05);
        let out = bandpass_filter(&sine_trace(10.0, 1.0, 2000.0, 4.0), &cfg).unwrap();
        let a = steady_amplitude(&out.axis(0), 4000);
        assert!(a <= 0.1, "{a}");
        assert!((a - analytic_gain(10.0, 2000.0)).abs() < 2e-3);
    }

    #[test]
    fn dc_is_removed_after_transient() {
        let n = 4000;
        let c = vec![3.0; n];
        let trace = AccelTrace::from_axes(0.0, 2000.0, &c, &c, &c).unwrap();
        let out = bandpass_filter(&trace, &PipelineConfig::default()).unwrap();
        for axis in 0..3 {
            assert!(rms(&out.axis(axis)[1000..]) < 0.01 * 3.0);
        }
    }

    #[test]
    fn cutoff_at_nyquist_is_rejected() {
        let t = sine_trace(200.0, 1.0, 1000.0, 1.0);
        assert!(matches!(bandpass_filter(&t, &PipelineConfig::default()), Err(DspError::InvalidConfig(_))));
    }

    #[test]
    fn magnitude_reduction() {
        let t = AccelTrace::from_axes(0.0, 1000.0, &[3.0, 0.0], &[4.0, 0.0], &[0.0, 0.0]).unwrap();
        let s = reduce_3to1(&t, Reduction::Magnitude).unwrap();
        assert_eq!(s.values, vec![5.0, 0.0]);
    }

    #[test]
    fn dft321_single_axis_and_zero() {
        let x: Vec<f64> = (0..500).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let z = vec![0.0; 500];
        let t = AccelTrace::from_axes(0.0, 1000.0, &x, &z, &z).unwrap();
        let s = reduce_3to1(&t, Reduction::Dft321).unwrap();
        assert_eq!(s.len(), 500);
        let ex: f64 = x.iter().map(|v| v * v).sum();
        let es: f64 = s.values.iter().map(|v| v * v).sum();
        assert!((es - ex).abs() / ex < 1e-6);
        for (a, b) in x.iter().zip(&s.values) {
            assert!((a - b).abs() < 1e-9);
        }
        let zt = AccelTrace::from_axes(0.0, 1000.0, &z, &z, &z).unwrap();
        assert!(reduce_3to1(&zt, Reduction::Dft321).unwrap().values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dft321_preserves_total_energy() {
        let t = synth_texture(&Ladder::default().levels[4], &SynthParams::default()).unwrap();
        let s = reduce_3to1(&t, Reduction::Dft321).unwrap();
        let axes: f64 = (0..3).map(|a| t.axis(a).iter().map(|v| v * v).sum::<f64>()).sum();
        let out: f64 = s.values.iter().map(|v| v * v).sum();
        assert!((out - axes).abs() / axes < 1e-6);
    }

    #[test]
    fn limiter_behaviour() {
        let c = 2.0;
        assert_eq!(limit(&[0.5, -1.0, 2.0], c).unwrap(), vec![0.5, -1.0, 2.0]);
        assert_eq!(limit(&[4.0, -4.0], c).unwrap(), vec![2.0, -2.0]);
        let x = [5.0, -0.1, 3.0, f64::INFINITY, f64::NAN];
        let once = limit(&x, c).unwrap();
        assert_eq!(limit(&once, c).unwrap(), once);
        assert!(once.iter().all(|v| v.is_finite()));
        assert!(limit(&x, 0.0).is_err());
    }

    #[test]
    fn pwm_encoding_edges() {
        let cfg = PipelineConfig { scale_k: 0.5, duty_max: 0.8, frame_rate_hz: 500.0, ..Default::default() };
        let zero = Signal::new(1000.0, vec![0.0; 100]);
        let p = encode_pwm(&zero, &cfg).unwrap();
        assert_eq!(p.frames.len(), 50);
        assert!(p.frames.iter().all(|f| f.duty == 0.0));
        let sat = Signal::new(1000.0, vec![0.8 / 0.5; 100]);
        let p = encode_pwm(&sat, &cfg).unwrap();
        assert!(p.frames.iter().all(|f| f.duty == 0.8));
        assert_eq!(p.frames[1].t, 0.002);
    }

    #[test]
    fn routing() {
        let a = PwmStream { frame_rate_hz: 1000.0, frames: vec![PwmFrame { t: 0.0, duty: 0.3 }] };
        let b = PwmStream { frame_rate_hz: 1000.0, frames: vec![PwmFrame { t: 0.0, duty: 0.7 }] };
        assert_eq!(route_channels(&a, Some(&b)).unwrap(), (a.clone(), b.clone()));
        assert_eq!(route_channels(&b, Some(&a)).unwrap(), (b.clone(), a.clone()));
        let (l, r) = route_channels(&a, None).unwrap();
        assert_eq!(l, a);
        assert_eq!(r.duties(), vec![0.0]);
        let c = PwmStream { frame_rate_hz: 500.0, frames: vec![] };
        assert!(route_channels(&a, Some(&c)).is_err());
    }

    #[test]
    fn moving_average_cases() {
        let x = vec![1.0, -2.0, 3.5, 7.0];
        assert_eq!(moving_average(&x, 1).unwrap(), x);
        let c = vec![2.5; 9];
        for v in moving_average(&c, 5).unwrap() {
            assert!((v - 2.5).abs() < 1e-12);
        }
        let w = 5;
        let mut imp = vec![0.0; 21];
        imp[10] = w as f64;
        let out = moving_average(&imp, w).unwrap();
        for (i, v) in out.iter().enumerate() {
            let expect = if (8..=12).contains(&i) { 1.0 } else { 0.0 };
            assert!((v - expect).abs() < 1e-12, "{i}");
        }
        assert!(moving_average(&x, 2).is_err());
        assert!(moving_average(&x, 0).is_err());
    }

    #[test]
    fn default_scale_k_is_calibrated() {
        let bank = TextureBank::synthesize(&Ladder::default(), &SynthParams::default()).unwrap();
        let p60 = bank.ladder.index_of("P60").unwrap();
        let traces: Vec<&AccelTrace> = bank.traces[p60].iter().collect();
        let k = calibrate_scale_k(&traces, &PipelineConfig::default()).unwrap();
        assert!((k - DEFAULT_SCALE_K).abs() < 1e-12 * k, "calibrated scale_k = {k:?}");
    }
}
