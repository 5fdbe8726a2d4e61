//! Texture-sliding acceleration traces: synthesis, CSV ingest and export.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

/// Minimum sampling rate accepted for an acceleration trace.
pub const MIN_RATE_HZ: f64 = 1000.0;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("line {line}: timestamp {t} does not increase")]
    NonMonotone { line: u64, t: f64 },
    #[error("line {line}: sample spacing {delta} s differs from 1/{rate_hz} s")]
    NonUniform { line: u64, delta: f64, rate_hz: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A sandpaper stimulus: FEPA P-grade and average grit size in µm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SandpaperSpec {
    pub fepa_grade: String,
    pub grit_um: f64,
}

impl SandpaperSpec {
    pub fn new(fepa_grade: impl Into<String>, grit_um: f64) -> Result<Self, TraceError> {
        if !(grit_um > 0.0 && grit_um.is_finite()) {
            return Err(TraceError::InvalidParams(format!("grit size must be positive, got {grit_um}")));
        }
        Ok(SandpaperSpec { fepa_grade: fepa_grade.into(), grit_um })
    }
}

impl fmt::Display for SandpaperSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({} µm)", self.fepa_grade, self.grit_um)
    }
}

/// The five FEPA grades used as stimuli, smoothest first.
pub const STANDARD_LADDER: [(&str, f64); 5] =
    [("P1000", 18.0), ("P220", 65.0), ("P120", 127.0), ("P80", 195.0), ("P60", 264.0)];

pub const REFERENCE_GRADE: &str = "P120";

/// An ordered set of stimuli with one designated reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ladder {
    /// Sorted by ascending grit size.
    pub levels: Vec<SandpaperSpec>,
    pub reference: String,
}

impl Default for Ladder {
    fn default() -> Self {
        Ladder {
            levels: STANDARD_LADDER
                .iter()
                .map(|&(g, um)| SandpaperSpec { fepa_grade: g.to_string(), grit_um: um })
                .collect(),
            reference: REFERENCE_GRADE.to_string(),
        }
    }
}

impl Ladder {
    pub fn validate(&self) -> Result<(), TraceError> {
        if self.levels.len() < 2 {
            return Err(TraceError::InvalidParams("ladder needs at least two levels".into()));
        }
        for s in &self.levels {
            SandpaperSpec::new(s.fepa_grade.clone(), s.grit_um)?;
        }
        if self.levels.windows(2).any(|w| w[0].grit_um >= w[1].grit_um) {
            return Err(TraceError::InvalidParams("ladder must be sorted by strictly increasing grit".into()));
        }
        if self.reference_index().is_none() {
            return Err(TraceError::InvalidParams(format!("reference {} is not on the ladder", self.reference)));
        }
        Ok(())
    }

    pub fn reference_index(&self) -> Option<usize> {
        self.levels.iter().position(|s| s.fepa_grade == self.reference)
    }

    pub fn reference_spec(&self) -> &SandpaperSpec {
        &self.levels[self.reference_index().expect("validated ladder")]
    }

    pub fn index_of(&self, grade: &str) -> Option<usize> {
        self.levels.iter().position(|s| s.fepa_grade == grade)
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccelSample {
    pub t: f64,
    pub ax: f64,
    pub ay: f64,
    pub az: f64,
}

impl AccelSample {
    pub fn magnitude(&self) -> f64 {
        (self.ax * self.ax + self.ay * self.ay + self.az * self.az).sqrt()
    }
}

/// Uniformly sampled three-axis acceleration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccelTrace {
    samples: Vec<AccelSample>,
    rate_hz: f64,
}

const SPACING_TOL_S: f64 = 1e-9;

impl AccelTrace {
    /// Validates finiteness, strictly increasing timestamps and uniform spacing.
    pub fn new(samples: Vec<AccelSample>, rate_hz: f64) -> Result<Self, TraceError> {
        if !(rate_hz >= MIN_RATE_HZ && rate_hz.is_finite()) {
            return Err(TraceError::InvalidParams(format!(
                "sampling rate must be at least {MIN_RATE_HZ} Hz, got {rate_hz}"
            )));
        }
        let dt = 1.0 / rate_hz;
        for (i, pair) in samples.windows(2).enumerate() {
            let line = i as u64 + 2;
            let delta = pair[1].t - pair[0].t;
            if !(delta > 0.0) {
                return Err(TraceError::NonMonotone { line, t: pair[1].t });
            }
            if (delta - dt).abs() > SPACING_TOL_S {
                return Err(TraceError::NonUniform { line, delta, rate_hz });
            }
        }
        if let Some(s) = samples
            .iter()
            .find(|s| !(s.t.is_finite() && s.ax.is_finite() && s.ay.is_finite() && s.az.is_finite()))
        {
            return Err(TraceError::InvalidParams(format!("non-finite sample at t={}", s.t)));
        }
        Ok(AccelTrace { samples, rate_hz })
    }

    /// Build a trace from per-axis arrays starting at `t0`.
    pub fn from_axes(t0: f64, rate_hz: f64, ax: &[f64], ay: &[f64], az: &[f64]) -> Result<Self, TraceError> {
        if ax.len() != ay.len() || ax.len() != az.len() {
            return Err(TraceError::InvalidParams("axis lengths differ".into()));
        }
        let samples = (0..ax.len())
            .map(|i| AccelSample { t: t0 + i as f64 / rate_hz, ax: ax[i], ay: ay[i], az: az[i] })
            .collect();
        Self::new(samples, rate_hz)
    }

    pub fn samples(&self) -> &[AccelSample] {
        &self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn start_time(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    /// Axis `0`, `1` or `2` as a vector.
    pub fn axis(&self, axis: usize) -> Vec<f64> {
        self.samples
            .iter()
            .map(|s| match axis {
                0 => s.ax,
                1 => s.ay,
                _ => s.az,
            })
            .collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.samples.iter().map(AccelSample::magnitude).collect()
    }

    /// RMS of |a| over the trace.
    pub fn rms_magnitude(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let ss: f64 = self.samples.iter().map(|s| s.ax * s.ax + s.ay * s.ay + s.az * s.az).sum();
        (ss / self.samples.len() as f64).sqrt()
    }
}

/// Parameters of the texture surrogate generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Recorded as metadata; scanning speed is not a perceptual variable here.
    pub scan_speed_mps: f64,
    /// RMS of |a| per µm^gamma of grit.
    pub gain_k: f64,
    pub exponent_gamma: f64,
    pub band_lo_hz: f64,
    pub band_hi_hz: f64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            scan_speed_mps: 0.05,
            gain_k: 0.01,
            exponent_gamma: 1.0,
            band_lo_hz: 60.0,
            band_hi_hz: 450.0,
            duration_s: 1.0,
            rate_hz: 2000.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<(), TraceError> {
        let bad = |m: String| Err(TraceError::InvalidParams(m));
        if !(self.rate_hz >= MIN_RATE_HZ && self.rate_hz.is_finite()) {
            return bad(format!("rate_hz must be >= {MIN_RATE_HZ}, got {}", self.rate_hz));
        }
        if !(self.band_lo_hz > 0.0 && self.band_lo_hz < self.band_hi_hz && self.band_hi_hz < self.rate_hz / 2.0) {
            return bad(format!(
                "band must satisfy 0 < {} < {} < {}",
                self.band_lo_hz,
                self.band_hi_hz,
                self.rate_hz / 2.0
            ));
        }
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad(format!("duration_s must be positive, got {}", self.duration_s));
        }
        if !(self.gain_k >= 0.0 && self.gain_k.is_finite() && self.exponent_gamma.is_finite()) {
            return bad("gain_k must be non-negative and exponent finite".into());
        }
        Ok(())
    }

    /// Target RMS of |a| for a given grit size.
    pub fn target_rms(&self, grit_um: f64) -> f64 {
        self.gain_k * grit_um.powf(self.exponent_gamma)
    }

    pub fn sample_count(&self) -> usize {
        (self.duration_s * self.rate_hz).round().max(1.0) as usize
    }
}

/// Zero every FFT bin outside `[lo, hi]` Hz of a real signal.
fn band_limit(x: &mut [f64], rate_hz: f64, lo: f64, hi: f64, planner: &mut FftPlanner<f64>) {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = k.min(n - k);
        let f = bin as f64 * rate_hz / n as f64;
        if f < lo || f > hi {
            *c = Complex::new(0.0, 0.0);
        }
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    for (v, c) in x.iter_mut().zip(&buf) {
        *v = c.re / n as f64;
    }
}

/// Band-limited Gaussian surrogate of a finger sliding over `spec`.
///
/// Each axis carries independent noise restricted to the configured band; the
/// three axes are then scaled together so RMS(|a|) equals
/// `gain_k * grit_um^exponent_gamma`.
pub fn synth_texture(spec: &SandpaperSpec, params: &SynthParams) -> Result<AccelTrace, TraceError> {
    params.validate()?;
    SandpaperSpec::new(spec.fepa_grade.clone(), spec.grit_um)?;
    let n = params.sample_count();
    let mut rng = rng::derived_rng(params.seed, &format!("texture/{}", spec.fepa_grade), 0);
    let mut planner = FftPlanner::new();
    let mut axes: [Vec<f64>; 3] = Default::default();
    for axis in axes.iter_mut() {
        let mut x: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
        band_limit(&mut x, params.rate_hz, params.band_lo_hz, params.band_hi_hz, &mut planner);
        *axis = x;
    }
    let ms: f64 = (0..n).map(|i| axes.iter().map(|a| a[i] * a[i]).sum::<f64>()).sum::<f64>() / n as f64;
    let target = params.target_rms(spec.grit_um);
    let scale = if ms > 0.0 { target / ms.sqrt() } else { 0.0 };
    for a in axes.iter_mut() {
        a.iter_mut().for_each(|v| *v *= scale);
    }
    AccelTrace::from_axes(0.0, params.rate_hz, &axes[0], &axes[1], &axes[2])
}

/// Stored recordings: `variants` traces per ladder level.
#[derive(Debug, Clone)]
pub struct TextureBank {
    pub ladder: Ladder,
    /// `traces[level][variant]`
    pub traces: Vec<Vec<AccelTrace>>,
}

pub const VARIANTS_PER_LEVEL: usize = 2;

impl TextureBank {
    /// Synthesize two variants per ladder level; variant `v` uses a seed derived from `params.seed`.
    pub fn synthesize(ladder: &Ladder, params: &SynthParams) -> Result<Self, TraceError> {
        ladder.validate()?;
        let traces = ladder
            .levels
            .iter()
            .map(|spec| {
                (0..VARIANTS_PER_LEVEL)
                    .map(|v| {
                        let p = SynthParams { seed: rng::derive_seed(params.seed, "variant", v as u64), ..params.clone() };
                        synth_texture(spec, &p)
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TextureBank { ladder: ladder.clone(), traces })
    }

    pub fn get(&self, level: usize, variant: usize) -> Option<&AccelTrace> {
        self.traces.get(level).and_then(|v| v.get(variant))
    }

    /// File name used when the bank is written to disk, e.g. `P60_v1.csv`.
    pub fn file_name(spec: &SandpaperSpec, variant: usize) -> String {
        format!("{}_v{}.csv", spec.fepa_grade, variant + 1)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>, TraceError> {
        std::fs::create_dir_all(dir)?;
        let mut written = Vec::new();
        for (spec, variants) in self.ladder.levels.iter().zip(&self.traces) {
            for (v, trace) in variants.iter().enumerate() {
                let path = dir.join(Self::file_name(spec, v));
                save_trace(trace, &path)?;
                written.push(path);
            }
        }
        Ok(written)
    }

    pub fn load_dir(dir: &Path, ladder: &Ladder) -> Result<Self, TraceError> {
        ladder.validate()?;
        let traces = ladder
            .levels
            .iter()
            .map(|spec| {
                (0..VARIANTS_PER_LEVEL)
                    .map(|v| load_trace(&dir.join(Self::file_name(spec, v))))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TextureBank { ladder: ladder.clone(), traces })
    }
}

/// Read a `t,ax,ay,az` CSV trace. The sampling rate is inferred from the timestamps.
pub fn load_trace(path: &Path) -> Result<AccelTrace, TraceError> {
    let file = File::open(path)?;
    read_trace(file)
}

pub fn read_trace<R: std::io::Read>(reader: R) -> Result<AccelTrace, TraceError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| TraceError::Parse { line: 1, message: e.to_string() })?
        .clone();
    let cols: Vec<&str> = header.iter().collect();
    if cols != ["t", "ax", "ay", "az"] {
        return Err(TraceError::Parse { line: 1, message: format!("expected header t,ax,ay,az, got {}", cols.join(",")) });
    }
    let mut samples = Vec::new();
    let mut lines = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| TraceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let field = |i: usize| -> Result<f64, TraceError> {
            rec.get(i)
                .ok_or_else(|| TraceError::Parse { line, message: format!("missing column {}", i + 1) })?
                .parse::<f64>()
                .map_err(|e| TraceError::Parse { line, message: format!("column {}: {e}", i + 1) })
        };
        samples.push(AccelSample { t: field(0)?, ax: field(1)?, ay: field(2)?, az: field(3)? });
        lines.push(line);
    }
    if samples.len() < 2 {
        return Err(TraceError::Parse { line: 1, message: "trace needs at least two samples".into() });
    }
    // Report ordering problems against file lines before estimating the rate.
    for (i, pair) in samples.windows(2).enumerate() {
        if !(pair[1].t > pair[0].t) {
            return Err(TraceError::NonMonotone { line: lines[i + 1], t: pair[1].t });
        }
    }
    let span = samples[samples.len() - 1].t - samples[0].t;
    let raw_rate = (samples.len() - 1) as f64 / span;
    let rounded = (raw_rate * 1e6).round() / 1e6;
    let rate_hz = if (raw_rate - rounded).abs() < 1e-6 * raw_rate.max(1.0) { rounded } else { raw_rate };
    AccelTrace::new(samples, rate_hz).map_err(|e| match e {
        TraceError::NonUniform { line, delta, rate_hz } => {
            TraceError::NonUniform { line: lines[(line - 1) as usize], delta, rate_hz }
        }
        other => other,
    })
}

/// Write a trace as `t,ax,ay,az` CSV with shortest round-trip float formatting.
pub fn save_trace(trace: &AccelTrace, path: &Path) -> Result<(), TraceError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_trace(trace, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(trace: &AccelTrace, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "t,ax,ay,az")?;
    for s in trace.samples() {
        writeln!(w, "{},{},{},{}", s.t, s.ax, s.ay, s.az)?;
    }
    Ok(())
}
