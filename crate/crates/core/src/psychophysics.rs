//! Constant-stimuli experiments and texture identification sessions run
//! against simulated observers or scripted responses.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::{add_noise_floor, render_noiseless, ActuatorError, ActuatorModel};
use crate::dsp::{process_trace, rms, DspError, PipelineConfig};
use crate::rng::{self, Rng};
use crate::statfit::{FitDataset, FitTrial};
use crate::texture::{AccelTrace, Ladder, SandpaperSpec, TextureBank, VARIANTS_PER_LEVEL};

pub const TRIAL_LOG_SCHEMA: &str = "vibrotact/trial-log";
pub const IDENTIFICATION_LOG_SCHEMA: &str = "vibrotact/identification-log";
pub const LOG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("log format error at line {line}: {message}")]
    Log { line: usize, message: String },
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Actuator(#[from] ActuatorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PresentationOrder {
    RefFirst,
    CmpFirst,
}

/// Which stimulus of a pair is presented first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderPolicy {
    #[default]
    Randomized,
    RefFirst,
    CmpFirst,
}

/// One constant-stimuli trial as logged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
    pub reference: SandpaperSpec,
    pub comparison: SandpaperSpec,
    pub ref_variant: u8,
    pub cmp_variant: u8,
    pub presentation_order: PresentationOrder,
    /// Y = 1: the comparison felt rougher than the reference.
    pub response_cmp_rougher: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedTrial {
    /// Index into the plan's ladder.
    pub level: usize,
    /// 1-based stored-signal variants.
    pub ref_variant: u8,
    pub cmp_variant: u8,
    pub presentation_order: PresentationOrder,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub ladder: Ladder,
    pub trials_per_level: usize,
    /// Longest allowed run of consecutive trials at one level.
    pub max_run: usize,
    pub seed: u64,
    pub trials: Vec<PlannedTrial>,
}

pub const TRIALS_PER_LEVEL: usize = 20;
pub const MAX_CONSECUTIVE: usize = 3;

/// Standard plan: 5 levels x 20 trials, at most 3 consecutive repeats.
pub fn build_plan(seed: u64) -> ExperimentPlan {
    build_plan_with(&Ladder::default(), TRIALS_PER_LEVEL, MAX_CONSECUTIVE, seed).expect("standard plan is feasible")
}

fn trailing_run(seq: &[usize], level: usize) -> usize {
    seq.iter().rev().take_while(|&&l| l == level).count()
}

pub fn build_plan_with(ladder: &Ladder, trials_per_level: usize, max_run: usize, seed: u64) -> Result<ExperimentPlan, ExperimentError> {
    ladder.validate().map_err(|e| ExperimentError::Config(e.to_string()))?;
    if trials_per_level == 0 || max_run == 0 {
        return Err(ExperimentError::Config("trials per level and run cap must be positive".into()));
    }
    let levels = ladder.len();
    if (trials_per_level - 1) > max_run * (levels - 1) * trials_per_level {
        return Err(ExperimentError::Config("run cap cannot be satisfied".into()));
    }
    let total = levels * trials_per_level;
    let mut r = rng::derived_rng(seed, "plan", 0);
    // Draw levels proportionally to their remaining counts, excluding any level
    // that would exceed the run cap; restart on a dead end.
    let sequence = 'outer: loop {
        let mut remaining = vec![trials_per_level; levels];
        let mut seq: Vec<usize> = Vec::with_capacity(total);
        while seq.len() < total {
            let weights: Vec<usize> = (0..levels)
                .map(|l| if remaining[l] > 0 && trailing_run(&seq, l) < max_run { remaining[l] } else { 0 })
                .collect();
            let sum: usize = weights.iter().sum();
            if sum == 0 {
                continue 'outer;
            }
            let mut pick = r.random_range(0..sum);
            let level = weights.iter().position(|&w| {
                if pick < w {
                    true
                } else {
                    pick -= w;
                    false
                }
            });
            let level = level.expect("pick below weight sum");
            remaining[level] -= 1;
            seq.push(level);
        }
        break seq;
    };
    let trials = sequence
        .into_iter()
        .map(|level| PlannedTrial {
            level,
            ref_variant: r.random_range(1..=VARIANTS_PER_LEVEL as u8),
            cmp_variant: r.random_range(1..=VARIANTS_PER_LEVEL as u8),
            presentation_order: if r.random::<bool>() { PresentationOrder::RefFirst } else { PresentationOrder::CmpFirst },
        })
        .collect();
    Ok(ExperimentPlan { ladder: ladder.clone(), trials_per_level, max_run, seed, trials })
}

impl ExperimentPlan {
    /// Fix the presentation order of every trial; `Randomized` keeps the drawn order.
    pub fn with_order(mut self, policy: OrderPolicy) -> Self {
        let fixed = match policy {
            OrderPolicy::Randomized => return self,
            OrderPolicy::RefFirst => PresentationOrder::RefFirst,
            OrderPolicy::CmpFirst => PresentationOrder::CmpFirst,
        };
        self.trials.iter_mut().for_each(|t| t.presentation_order = fixed);
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        let levels = self.ladder.len();
        if self.trials.len() != levels * self.trials_per_level {
            return Err(format!("plan has {} trials, expected {}", self.trials.len(), levels * self.trials_per_level));
        }
        let mut counts = vec![0usize; levels];
        for t in &self.trials {
            *counts.get_mut(t.level).ok_or("level out of range")? += 1;
        }
        if counts.iter().any(|&c| c != self.trials_per_level) {
            return Err(format!("unbalanced level counts {counts:?}"));
        }
        let longest = longest_run(&self.trials.iter().map(|t| t.level).collect::<Vec<_>>());
        if longest > self.max_run {
            return Err(format!("run of {longest} consecutive trials exceeds cap {}", self.max_run));
        }
        Ok(())
    }
}

pub fn longest_run(seq: &[usize]) -> usize {
    seq.chunk_by(|a, b| a == b).map(<[usize]>::len).max().unwrap_or(0)
}

/// Linear map from a rendered trace's RMS to perceived roughness units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerceptMap {
    pub offset: f64,
    pub scale: f64,
}

impl Default for PerceptMap {
    fn default() -> Self {
        PerceptMap { offset: 0.0, scale: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObserverModel {
    pub percept_map: PerceptMap,
    /// Internal noise SD in percept units.
    pub noise_sigma: f64,
    /// Added to the reference percept before comparison.
    pub bias: f64,
    pub lapse_rate: f64,
}

impl Default for ObserverModel {
    fn default() -> Self {
        ObserverModel { percept_map: PerceptMap::default(), noise_sigma: 0.1, bias: 0.0, lapse_rate: 0.0 }
    }
}

/// JND of the pooled able-bodied fit, µm.
pub const TARGET_JND_UM: f64 = 87.30;
/// PSE of the pooled able-bodied fit, µm.
pub const TARGET_PSE_UM: f64 = 151.96;

impl ObserverModel {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if !(self.noise_sigma > 0.0) {
            return Err(ExperimentError::Config(format!("noise_sigma must be positive, got {}", self.noise_sigma)));
        }
        if !(0.0..=0.1).contains(&self.lapse_rate) {
            return Err(ExperimentError::Config(format!("lapse_rate must lie in [0, 0.1], got {}", self.lapse_rate)));
        }
        if !(self.percept_map.scale != 0.0 && self.percept_map.scale.is_finite()) {
            return Err(ExperimentError::Config("percept scale must be finite and non-zero".into()));
        }
        Ok(())
    }

    /// Perceived roughness of a rendered trace.
    pub fn percept(&self, render: &AccelTrace) -> f64 {
        self.percept_of_rms(render.rms_magnitude())
    }

    pub fn percept_of_rms(&self, rms: f64) -> f64 {
        (rms - self.percept_map.offset) / self.percept_map.scale
    }

    /// Forced-choice response given the two noiseless percepts.
    pub fn respond(&self, percept_ref: f64, percept_cmp: f64, rng: &mut Rng) -> bool {
        if self.lapse_rate > 0.0 && rng.random::<f64>() < self.lapse_rate {
            return rng.random::<bool>();
        }
        let er: f64 = StandardNormal.sample(rng);
        let ec: f64 = StandardNormal.sample(rng);
        percept_cmp + self.noise_sigma * ec > percept_ref + self.noise_sigma * er + self.bias
    }

    /// Probability of a "comparison rougher" response.
    pub fn p_rougher(&self, percept_ref: f64, percept_cmp: f64) -> f64 {
        let z = (percept_cmp - percept_ref - self.bias) / (std::f64::consts::SQRT_2 * self.noise_sigma);
        let p = crate::statfit::normal::cdf(z);
        (1.0 - self.lapse_rate) * p + 0.5 * self.lapse_rate
    }
}

pub fn simulate_observer_response(ref_render: &AccelTrace, cmp_render: &AccelTrace, observer: &ObserverModel, seed: u64) -> bool {
    let mut r = rng::derived_rng(seed, "response", 0);
    observer.respond(observer.percept(ref_render), observer.percept(cmp_render), &mut r)
}

/// Renders bank stimuli through the pipeline and the actuator. The noiseless
/// part of every render is computed once; each call adds fresh output noise.
#[derive(Debug, Clone)]
pub struct StimulusRenderer {
    pub bank: TextureBank,
    pub pipeline: PipelineConfig,
    pub actuator: ActuatorModel,
    noiseless: Vec<Vec<(Vec<f64>, f64, f64)>>,
}

impl StimulusRenderer {
    pub fn new(bank: TextureBank, pipeline: PipelineConfig, actuator: ActuatorModel) -> Result<Self, ExperimentError> {
        if bank.traces.len() != bank.ladder.len() {
            return Err(ExperimentError::Config(format!(
                "texture bank has {} levels, ladder has {}",
                bank.traces.len(),
                bank.ladder.len()
            )));
        }
        for (spec, variants) in bank.ladder.levels.iter().zip(&bank.traces) {
            if variants.len() < VARIANTS_PER_LEVEL {
                return Err(ExperimentError::Config(format!(
                    "texture bank is missing variant {} of {}",
                    variants.len() + 1,
                    spec.fepa_grade
                )));
            }
        }
        let noiseless = bank
            .traces
            .iter()
            .map(|variants| {
                variants
                    .iter()
                    .map(|trace| {
                        let run = process_trace(trace, &pipeline, None)?;
                        let clean = render_noiseless(&run.pwm, &actuator, &run.carrier)?;
                        Ok((clean, run.carrier.rate_hz, run.carrier.t0))
                    })
                    .collect::<Result<Vec<_>, ExperimentError>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(StimulusRenderer { bank, pipeline, actuator, noiseless })
    }

    pub fn ladder(&self) -> &Ladder {
        &self.bank.ladder
    }

    /// Render `variant` (0-based) of `level` with output noise from `seed`.
    pub fn render_values(&self, level: usize, variant: usize, seed: u64) -> Vec<f64> {
        let mut out = self.noiseless[level][variant].0.clone();
        add_noise_floor(&mut out, &self.actuator, seed);
        out
    }

    pub fn render(&self, level: usize, variant: usize, seed: u64) -> AccelTrace {
        let (_, rate, t0) = self.noiseless[level][variant];
        let values = self.render_values(level, variant, seed);
        let zeros = vec![0.0; values.len()];
        AccelTrace::from_axes(t0, rate, &values, &zeros, &zeros).expect("renderer output is uniformly sampled")
    }

    /// RMS of a fresh render.
    pub fn render_rms(&self, level: usize, variant: usize, seed: u64) -> f64 {
        rms(&self.render_values(level, variant, seed))
    }

    /// Observer whose psychometric function over grit size has the given JND
    /// and PSE: rendered RMS is mapped linearly onto µm (least squares over the
    /// bank), internal noise is `jnd/√2` and the bias shifts the PSE.
    pub fn calibrate_observer(&self, jnd_um: f64, pse_um: f64, seed: u64) -> ObserverModel {
        let ladder = self.ladder();
        let mut pts = Vec::new();
        for (level, spec) in ladder.levels.iter().enumerate() {
            for variant in 0..VARIANTS_PER_LEVEL {
                let s = rng::derive_seed(seed, "calibration", (level * VARIANTS_PER_LEVEL + variant) as u64);
                pts.push((spec.grit_um, self.render_rms(level, variant, s)));
            }
        }
        let n = pts.len() as f64;
        let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        let scale = sxy / sxx;
        let offset = my - scale * mx;
        ObserverModel {
            percept_map: PerceptMap { offset, scale },
            noise_sigma: jnd_um / std::f64::consts::SQRT_2,
            bias: pse_um - ladder.reference_spec().grit_um,
            lapse_rate: 0.0,
        }
    }
}

/// Where trial responses come from.
#[derive(Debug, Clone)]
pub enum ResponseSource {
    Observer { model: ObserverModel, seed: u64 },
    Scripted(Vec<bool>),
}

/// Parse a scripted response file: one `0` or `1` per line, blank lines ignored.
pub fn parse_scripted_responses<R: BufRead>(reader: R) -> Result<Vec<bool>, ExperimentError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        match line.trim() {
            "" => {}
            "0" => out.push(false),
            "1" => out.push(true),
            other => return Err(ExperimentError::Log { line: i + 1, message: format!("expected 0 or 1, got '{other}'") }),
        }
    }
    Ok(out)
}

/// Receives trial records as they are produced.
pub trait TrialSink<T> {
    fn record(&mut self, item: &T) -> std::io::Result<()>;
}

impl<T: Clone> TrialSink<T> for Vec<T> {
    fn record(&mut self, item: &T) -> std::io::Result<()> {
        self.push(item.clone());
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct LogHeader {
    schema: String,
    version: u32,
}

/// JSON-lines log writer: a schema header line, then one flushed line per record.
pub struct JsonlWriter<W: Write> {
    inner: W,
}

impl<W: Write> JsonlWriter<W> {
    pub fn new(mut inner: W, schema: &str) -> std::io::Result<Self> {
        let header = LogHeader { schema: schema.to_string(), version: LOG_VERSION };
        writeln!(inner, "{}", serde_json::to_string(&header).map_err(std::io::Error::other)?)?;
        inner.flush()?;
        Ok(JsonlWriter { inner })
    }

    pub fn into_inner(self) -> W {
        self.inner
    }
}

impl<W: Write, T: Serialize> TrialSink<T> for JsonlWriter<W> {
    fn record(&mut self, item: &T) -> std::io::Result<()> {
        writeln!(self.inner, "{}", serde_json::to_string(item).map_err(std::io::Error::other)?)?;
        self.inner.flush()
    }
}

/// Read a JSON-lines log written by [`JsonlWriter`] with the given schema.
pub fn read_jsonl_log<T: for<'de> Deserialize<'de>, R: BufRead>(reader: R, schema: &str) -> Result<Vec<T>, ExperimentError> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or(ExperimentError::Log { line: 1, message: "empty log".into() })??;
    let header: LogHeader =
        serde_json::from_str(&header).map_err(|e| ExperimentError::Log { line: 1, message: e.to_string() })?;
    if header.schema != schema || header.version != LOG_VERSION {
        return Err(ExperimentError::Log {
            line: 1,
            message: format!("expected schema {schema} v{LOG_VERSION}, got {} v{}", header.schema, header.version),
        });
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| ExperimentError::Log { line: i + 2, message: e.to_string() })?);
    }
    Ok(out)
}

/// Run a constant-stimuli session. Both stimuli of every trial are rendered
/// through the pipeline and actuator before the response is drawn.
pub fn run_experiment(
    plan: &ExperimentPlan,
    renderer: &StimulusRenderer,
    source: &ResponseSource,
    subject: Option<&str>,
    sink: &mut dyn TrialSink<TrialRecord>,
) -> Result<Vec<TrialRecord>, ExperimentError> {
    if plan.ladder != *renderer.ladder() {
        return Err(ExperimentError::Config("plan and texture bank use different ladders".into()));
    }
    match source {
        ResponseSource::Observer { model, .. } => model.validate()?,
        ResponseSource::Scripted(script) if script.len() < plan.trials.len() => {
            return Err(ExperimentError::Config(format!(
                "scripted responses cover {} trials, plan has {}",
                script.len(),
                plan.trials.len()
            )));
        }
        ResponseSource::Scripted(_) => {}
    }
    let ref_level = plan.ladder.reference_index().expect("validated ladder");
    let reference = plan.ladder.levels[ref_level].clone();
    let mut records = Vec::with_capacity(plan.trials.len());
    for (i, t) in plan.trials.iter().enumerate() {
        let (rv, cv) = (usize::from(t.ref_variant) - 1, usize::from(t.cmp_variant) - 1);
        let response = match source {
            ResponseSource::Observer { model, seed } => {
                let i = i as u64;
                let ref_render = renderer.render_rms(ref_level, rv, rng::derive_seed(*seed, "render-ref", i));
                let cmp_render = renderer.render_rms(t.level, cv, rng::derive_seed(*seed, "render-cmp", i));
                let mut r = rng::derived_rng(*seed, "response", i);
                model.respond(model.percept_of_rms(ref_render), model.percept_of_rms(cmp_render), &mut r)
            }
            ResponseSource::Scripted(script) => script[i],
        };
        let rec = TrialRecord {
            trial_index: i as u32 + 1,
            subject: subject.map(str::to_string),
            reference: reference.clone(),
            comparison: plan.ladder.levels[t.level].clone(),
            ref_variant: t.ref_variant,
            cmp_variant: t.cmp_variant,
            presentation_order: t.presentation_order,
            response_cmp_rougher: response,
        };
        sink.record(&rec)?;
        records.push(rec);
    }
    Ok(records)
}

/// Fitting dataset from trial records: x = comparison grit (µm), y = response.
pub fn records_to_dataset(records: &[TrialRecord]) -> FitDataset {
    FitDataset {
        trials: records
            .iter()
            .map(|r| FitTrial { x: r.comparison.grit_um, y: r.response_cmp_rougher, subject: r.subject.clone() })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationTrial {
    pub presented: SandpaperSpec,
    pub chosen: SandpaperSpec,
    pub feedback_on: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IdentificationConfig {
    /// Presentations per ladder level.
    pub n_reps: usize,
    /// Multiplies the observer noise when feedback is off; must exceed 1.
    pub degradation: f64,
}

impl Default for IdentificationConfig {
    fn default() -> Self {
        IdentificationConfig { n_reps: 5, degradation: 2.0 }
    }
}

/// Percepts of each bank stimulus, one render per (level, variant).
pub fn percept_table(renderer: &StimulusRenderer, observer: &ObserverModel, seed: u64) -> Vec<Vec<f64>> {
    (0..renderer.ladder().len())
        .map(|level| {
            (0..VARIANTS_PER_LEVEL)
                .map(|v| {
                    let s = rng::derive_seed(seed, "percept-table", (level * VARIANTS_PER_LEVEL + v) as u64);
                    observer.percept_of_rms(renderer.render_rms(level, v, s))
                })
                .collect()
        })
        .collect()
}

/// One identification session: each level is presented `n_reps` times in
/// random order and the observer picks the ladder level whose freshly
/// perceived candidate lies nearest the presented percept.
pub fn run_identification(
    percepts: &[Vec<f64>],
    ladder: &Ladder,
    observer: &ObserverModel,
    cfg: &IdentificationConfig,
    feedback_on: bool,
    seed: u64,
) -> Result<Vec<IdentificationTrial>, ExperimentError> {
    if !(cfg.degradation > 1.0) {
        return Err(ExperimentError::Config(format!("degradation factor must exceed 1, got {}", cfg.degradation)));
    }
    if percepts.len() != ladder.len() || percepts.iter().any(|v| v.is_empty()) {
        return Err(ExperimentError::Config("percept table does not match the ladder".into()));
    }
    let sigma = observer.noise_sigma * if feedback_on { 1.0 } else { cfg.degradation };
    let mut r = rng::derived_rng(seed, if feedback_on { "identify-on" } else { "identify-off" }, 0);
    let mut order: Vec<usize> = (0..ladder.len()).flat_map(|l| std::iter::repeat_n(l, cfg.n_reps)).collect();
    order.shuffle(&mut r);
    let draw = |r: &mut Rng, level: usize| {
        let v = r.random_range(0..percepts[level].len());
        let e: f64 = StandardNormal.sample(r);
        percepts[level][v] + sigma * e
    };
    Ok(order
        .into_iter()
        .map(|presented| {
            let chosen = if observer.lapse_rate > 0.0 && r.random::<f64>() < observer.lapse_rate {
                r.random_range(0..ladder.len())
            } else {
                let target = draw(&mut r, presented);
                let mut best = (f64::INFINITY, 0);
                for level in 0..ladder.len() {
                    let d = (draw(&mut r, level) - target).abs();
                    if d < best.0 {
                        best = (d, level);
                    }
                }
                best.1
            };
            IdentificationTrial {
                presented: ladder.levels[presented].clone(),
                chosen: ladder.levels[chosen].clone(),
                feedback_on,
            }
        })
        .collect())
}
