//! Stateful single-channel pipeline.
//!
//! Filter memory, the DFT321 block buffer and the partially filled PWM frame
//! are carried between `push` calls. Blocks and frames are aligned to the
//! absolute sample index, so any chunking of the input produces the same
//! output bits as a single whole-trace push.

use rustfft::FftPlanner;

use super::{dft321, limit_value, Cascade, DspError, PipelineConfig, PwmFrame, PwmStream, Reduction, Signal};
use super::PIPELINE_FILTER_ORDER;
use crate::texture::{AccelSample, AccelTrace};

pub(crate) struct FrameEncoder {
    scale_k: f64,
    duty_max: f64,
    frame_rate: f64,
    rate: f64,
    t0: f64,
    sample_index: u64,
    frame: u64,
    sum: f64,
    count: u32,
}

impl FrameEncoder {
    pub(crate) fn new(cfg: &PipelineConfig, rate: f64, t0: f64) -> Self {
        FrameEncoder {
            scale_k: cfg.scale_k,
            duty_max: cfg.duty_max,
            frame_rate: cfg.frame_rate_hz,
            rate,
            t0,
            sample_index: 0,
            frame: 0,
            sum: 0.0,
            count: 0,
        }
    }

    fn emit(&mut self, out: &mut Vec<PwmFrame>) {
        out.push(PwmFrame { t: self.t0 + self.frame as f64 / self.frame_rate, duty: self.sum / f64::from(self.count) });
        self.sum = 0.0;
        self.count = 0;
    }

    pub(crate) fn push(&mut self, y: f64, out: &mut Vec<PwmFrame>) {
        let frame = (self.sample_index as f64 * self.frame_rate / self.rate).floor() as u64;
        if frame != self.frame && self.count > 0 {
            self.emit(out);
        }
        self.frame = frame;
        self.sum += (self.scale_k * y.abs()).min(self.duty_max);
        self.count += 1;
        self.sample_index += 1;
    }

    pub(crate) fn flush(&mut self, out: &mut Vec<PwmFrame>) {
        if self.count > 0 {
            self.emit(out);
        }
    }
}

enum Reducer {
    Magnitude,
    Dft321 { block: usize, buf: [Vec<f64>; 3], planner: Box<FftPlanner<f64>> },
}

/// Newly produced output of one `push` or of `finish`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StreamOutput {
    /// Limited scalar signal (the pre-encoding carrier), one value per input sample.
    pub carrier: Vec<f64>,
    pub frames: Vec<PwmFrame>,
}

impl StreamOutput {
    fn extend(&mut self, other: StreamOutput) {
        self.carrier.extend(other.carrier);
        self.frames.extend(other.frames);
    }
}

pub struct Pipeline {
    cfg: PipelineConfig,
    rate: f64,
    filters: [Cascade; 3],
    reducer: Reducer,
    encoder: Option<FrameEncoder>,
    t0: Option<f64>,
}

impl std::fmt::Debug for Pipeline {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Pipeline").field("cfg", &self.cfg).field("rate", &self.rate).finish_non_exhaustive()
    }
}

impl Pipeline {
    pub fn new(cfg: &PipelineConfig, rate_hz: f64) -> Result<Self, DspError> {
        cfg.validate(rate_hz)?;
        let mk = || Cascade::butterworth_bandpass(cfg.hp_cutoff_hz, cfg.lp_cutoff_hz, rate_hz, PIPELINE_FILTER_ORDER);
        let reducer = match cfg.reduction {
            Reduction::Magnitude => Reducer::Magnitude,
            Reduction::Dft321 => Reducer::Dft321 {
                block: cfg.dft_block,
                buf: Default::default(),
                planner: Box::new(FftPlanner::new()),
            },
        };
        Ok(Pipeline { cfg: cfg.clone(), rate: rate_hz, filters: [mk(), mk(), mk()], reducer, encoder: None, t0: None })
    }

    fn emit_scalar(&mut self, y: f64, out: &mut StreamOutput) {
        let limited = limit_value(y, self.cfg.limiter_ceiling);
        out.carrier.push(limited);
        let t0 = self.t0.unwrap_or(0.0);
        let (cfg, rate) = (&self.cfg, self.rate);
        self.encoder.get_or_insert_with(|| FrameEncoder::new(cfg, rate, t0)).push(limited, &mut out.frames);
    }

    fn drain_block(&mut self, out: &mut StreamOutput) {
        let reduced = match &mut self.reducer {
            Reducer::Dft321 { buf, planner, .. } if !buf[0].is_empty() => {
                let r = dft321(&buf[0], &buf[1], &buf[2], planner);
                buf.iter_mut().for_each(Vec::clear);
                r
            }
            _ => return,
        };
        for y in reduced {
            self.emit_scalar(y, out);
        }
    }

    pub fn push(&mut self, chunk: &[AccelSample]) -> StreamOutput {
        let mut out = StreamOutput::default();
        if self.t0.is_none() {
            self.t0 = chunk.first().map(|s| s.t);
        }
        for s in chunk {
            let fx = self.filters[0].process(s.ax);
            let fy = self.filters[1].process(s.ay);
            let fz = self.filters[2].process(s.az);
            match &mut self.reducer {
                Reducer::Magnitude => {
                    let y = (fx * fx + fy * fy + fz * fz).sqrt();
                    self.emit_scalar(y, &mut out);
                }
                Reducer::Dft321 { block, buf, .. } => {
                    buf[0].push(fx);
                    buf[1].push(fy);
                    buf[2].push(fz);
                    if buf[0].len() == *block {
                        self.drain_block(&mut out);
                    }
                }
            }
        }
        out
    }

    /// Flush the partial DFT block and the partial PWM frame.
    pub fn finish(mut self) -> StreamOutput {
        let mut out = StreamOutput::default();
        self.drain_block(&mut out);
        if let Some(enc) = self.encoder.as_mut() {
            enc.flush(&mut out.frames);
        }
        out
    }

    pub fn frame_rate_hz(&self) -> f64 {
        self.cfg.frame_rate_hz
    }
}

/// Output of a complete pipeline pass over one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineRun {
    pub pwm: PwmStream,
    pub carrier: Signal,
}

/// Run `trace` through a fresh pipeline, optionally in chunks of `chunk` samples.
pub fn process_trace(trace: &AccelTrace, cfg: &PipelineConfig, chunk: Option<usize>) -> Result<PipelineRun, DspError> {
    if trace.is_empty() {
        return Err(DspError::Empty);
    }
    let mut p = Pipeline::new(cfg, trace.rate_hz())?;
    let mut acc = StreamOutput::default();
    match chunk {
        Some(0) => return Err(DspError::InvalidConfig("chunk size must be positive".into())),
        Some(c) => {
            for part in trace.samples().chunks(c) {
                acc.extend(p.push(part));
            }
        }
        None => acc.extend(p.push(trace.samples())),
    }
    acc.extend(p.finish());
    Ok(PipelineRun {
        pwm: PwmStream { frame_rate_hz: cfg.frame_rate_hz, frames: acc.frames },
        carrier: Signal { rate_hz: trace.rate_hz(), t0: trace.start_time(), values: acc.carrier },
    })
}
