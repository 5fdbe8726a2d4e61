use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::manifest::{beside, RunManifest};
use super::{
    data_err, BankArgs, CharacterizeArgs, CliError, DemoArgs, ExperimentArgs, FitArgs, GlobalArgs, IdentifyArgs,
    RenderArgs, ReportArgs, SusArgs, Switch, SynthArgs,
};
use crate::actuator::{compare_render, render, RenderComparison};
use crate::config::Config;
use crate::dsp::{process_trace, route_channels, Signal};
use crate::evaluation::{accuracy, confusion_from_trials, pairwise_success_table, sus_score, Accuracy, ConfusionMatrix, SusResponse};
use crate::par::{self, Execution};
use crate::psychophysics::{
    build_plan_with, parse_scripted_responses, percept_table, read_jsonl_log, records_to_dataset, run_experiment,
    run_identification, IdentificationTrial, JsonlWriter, ObserverModel, ResponseSource, StimulusRenderer, TrialRecord,
    IDENTIFICATION_LOG_SCHEMA, TRIAL_LOG_SCHEMA,
};
use crate::rng::derive_seed;
use crate::statfit::{
    bootstrap_fit, detect_flat_curve, fit_probit, fit_probit_random_intercept, BootstrapResult, FitDataset, FitError,
    PsychometricFit, DEFAULT_NODES,
};
use crate::texture::{load_trace, save_trace, TextureBank};

/// Noise SD given to subjects that do not feel the stimulus difference.
const INSENSITIVE_SIGMA_UM: f64 = 1e6;

fn write_json<T: Serialize>(value: &T, out: Option<&Path>) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(value).map_err(data_err)? + "\n";
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, json)?;
        }
        None => print!("{json}"),
    }
    Ok(())
}

fn open_read(p: &Path) -> Result<BufReader<File>, CliError> {
    File::open(p).map(BufReader::new).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))
}

fn fit_err(e: FitError) -> CliError {
    match e {
        FitError::UnreliableCi { .. } => CliError::NonConvergence(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn load_bank(cfg: &Config, bank: &BankArgs) -> Result<TextureBank, CliError> {
    match &bank.bank {
        Some(dir) => TextureBank::load_dir(dir, &cfg.ladder).map_err(|e| CliError::Data(format!("texture bank: {e}"))),
        None => TextureBank::synthesize(&cfg.ladder, &cfg.synth).map_err(data_err),
    }
}

fn renderer(cfg: &Config, bank: TextureBank) -> Result<StimulusRenderer, CliError> {
    StimulusRenderer::new(bank, cfg.pipeline.clone(), cfg.actuator.clone()).map_err(data_err)
}

/// Observer calibrated to the configured JND/PSE. The calibration renders draw
/// from the synthesis seed so every session of one bank shares one observer.
fn calibrated_observer(cfg: &Config, renderer: &StimulusRenderer, sigma: Option<f64>) -> Result<ObserverModel, CliError> {
    let o = &cfg.observer;
    let mut model = renderer.calibrate_observer(o.target_jnd_um, o.target_pse_um, derive_seed(cfg.synth.seed, "calibration", 0));
    model.lapse_rate = o.lapse_rate;
    if let Some(s) = sigma.or(o.noise_sigma) {
        model.noise_sigma = s;
    }
    model.validate().map_err(data_err)?;
    Ok(model)
}

pub fn cmd_synth(g: &GlobalArgs, a: &SynthArgs) -> Result<(), CliError> {
    let mut cfg = g.load_config()?;
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
    }
    let mut m = RunManifest::start("synth", &cfg);
    m.seed("synth", cfg.synth.seed);
    let bank = TextureBank::synthesize(&cfg.ladder, &cfg.synth).map_err(data_err)?;
    for p in bank.save_dir(&a.out).map_err(data_err)? {
        m.output(&p);
    }
    m.finish(Some(a.out.join("manifest.json")))?;
    Ok(())
}

pub fn cmd_render(g: &GlobalArgs, a: &RenderArgs) -> Result<(), CliError> {
    let cfg = g.load_config()?;
    let mut m = RunManifest::start("render", &cfg);
    m.seed("actuator-noise", a.seed).input(&a.input);
    let trace = load_trace(&a.input).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let run = process_trace(&trace, &cfg.pipeline, a.stream_chunk).map_err(data_err)?;
    let thumb = match &a.thumb {
        Some(p) => {
            m.input(p);
            let t = load_trace(p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
            Some(process_trace(&t, &cfg.pipeline, a.stream_chunk).map_err(data_err)?.pwm)
        }
        None => None,
    };
    let (index, thumb) = route_channels(&run.pwm, thumb.as_ref()).map_err(data_err)?;
    let rendered = render(&index, &cfg.actuator, &run.carrier, a.seed).map_err(data_err)?;

    std::fs::create_dir_all(&a.out)?;
    let stem = a.input.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
    let pwm_path = a.out.join(format!("{stem}_pwm.csv"));
    let thumb_path = a.out.join(format!("{stem}_thumb_pwm.csv"));
    let trace_path = a.out.join(format!("{stem}_rendered.csv"));
    index.save_csv(&pwm_path).map_err(data_err)?;
    thumb.save_csv(&thumb_path).map_err(data_err)?;
    save_trace(&rendered, &trace_path).map_err(data_err)?;
    m.output(&pwm_path).output(&thumb_path).output(&trace_path);
    m.finish(Some(a.out.join(format!("{stem}.manifest.json"))))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Characterization {
    grade: Option<String>,
    mean_duty: f64,
    max_duty: f64,
    comparison: RenderComparison,
}

fn characterize(
    trace: &crate::texture::AccelTrace,
    cfg: &Config,
    seed: u64,
) -> Result<(Characterization, Signal, Signal), CliError> {
    let run = process_trace(trace, &cfg.pipeline, None).map_err(data_err)?;
    let rendered = render(&run.pwm, &cfg.actuator, &run.carrier, seed).map_err(data_err)?;
    let r = Signal { rate_hz: rendered.rate_hz(), t0: rendered.start_time(), values: rendered.axis(0) };
    let comparison = compare_render(&run.carrier, &r).map_err(data_err)?;
    let c = Characterization { grade: None, mean_duty: run.pwm.mean_duty(), max_duty: run.pwm.max_duty(), comparison };
    Ok((c, run.carrier, r))
}

pub fn cmd_characterize(g: &GlobalArgs, a: &CharacterizeArgs) -> Result<(), CliError> {
    let cfg = g.load_config()?;
    let mut m = RunManifest::start("characterize", &cfg);
    m.seed("actuator-noise", a.seed).input(&a.input);
    let trace = load_trace(&a.input).map_err(|e| CliError::Data(format!("{}: {e}", a.input.display())))?;
    let (c, s, r) = characterize(&trace, &cfg, a.seed)?;
    write_json(&c, a.out.as_deref())?;
    if let Some(p) = &a.csv {
        let mut w = BufWriter::new(File::create(p)?);
        writeln!(w, "t,s,r")?;
        for (i, (sv, rv)) in s.values.iter().zip(&r.values).enumerate() {
            writeln!(w, "{},{sv},{rv}", s.t0 + i as f64 / s.rate_hz)?;
        }
        w.flush()?;
        m.output(p);
    }
    if let Some(p) = &a.out {
        m.output(p);
    }
    m.finish(a.out.as_deref().map(beside))?;
    Ok(())
}

pub fn cmd_experiment(g: &GlobalArgs, a: &ExperimentArgs) -> Result<(), CliError> {
    let cfg = g.load_config()?;
    let mut m = RunManifest::start("experiment", &cfg);
    m.seed("session", a.seed).seed("synth", cfg.synth.seed);
    if let Some(b) = &a.bank.bank {
        m.input(b);
    }
    let rend = renderer(&cfg, load_bank(&cfg, &a.bank)?)?;
    let source = match &a.responses {
        Some(p) => {
            m.input(p);
            ResponseSource::Scripted(parse_scripted_responses(open_read(p)?).map_err(data_err)?)
        }
        None => ResponseSource::Observer {
            model: calibrated_observer(&cfg, &rend, a.observer_sigma)?,
            seed: derive_seed(a.seed, "responses", 0),
        },
    };
    let plan = build_plan_with(&cfg.ladder, cfg.experiment.trials_per_level, cfg.experiment.max_consecutive, a.seed)
        .map_err(data_err)?
        .with_order(cfg.experiment.presentation_order);
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut sink = JsonlWriter::new(BufWriter::new(File::create(&a.out)?), TRIAL_LOG_SCHEMA)?;
    run_experiment(&plan, &rend, &source, a.subject.as_deref(), &mut sink).map_err(data_err)?;
    m.output(&a.out);
    m.finish(Some(beside(&a.out)))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct IdentificationSummary {
    feedback_on: bool,
    n_trials: usize,
    accuracy: Accuracy,
}

pub fn cmd_identify(g: &GlobalArgs, a: &IdentifyArgs) -> Result<(), CliError> {
    let cfg = g.load_config()?;
    let mut m = RunManifest::start("identify", &cfg);
    m.seed("session", a.seed).seed("synth", cfg.synth.seed);
    if let Some(b) = &a.bank.bank {
        m.input(b);
    }
    let rend = renderer(&cfg, load_bank(&cfg, &a.bank)?)?;
    let observer = calibrated_observer(&cfg, &rend, a.observer_sigma)?;
    let mut id_cfg = cfg.identification;
    if let Some(r) = a.reps {
        id_cfg.n_reps = r;
    }
    if id_cfg.n_reps == 0 {
        return Err(CliError::Data("--reps must be positive".into()));
    }
    let table = percept_table(&rend, &observer, derive_seed(a.seed, "percepts", 0));
    let on = a.feedback == Switch::On;
    let trials = run_identification(&table, rend.ladder(), &observer, &id_cfg, on, a.seed).map_err(data_err)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut sink = JsonlWriter::new(BufWriter::new(File::create(&a.out)?), IDENTIFICATION_LOG_SCHEMA)?;
    for t in &trials {
        crate::psychophysics::TrialSink::record(&mut sink, t)?;
    }
    let cm = confusion_from_trials(&trials, rend.ladder()).map_err(data_err)?;
    write_json(&IdentificationSummary { feedback_on: on, n_trials: trials.len(), accuracy: accuracy(&cm).map_err(data_err)? }, None)?;
    m.output(&a.out);
    m.finish(Some(beside(&a.out)))?;
    Ok(())
}

/// Fit output: every fit field plus method metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub method: String,
    #[serde(flatten)]
    pub fit: PsychometricFit,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma_subject: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_subjects: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quadrature_nodes: Option<usize>,
    /// Bootstrap intervals always come from fixed-effect refits.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapResult>,
}

/// Fit `data`, optionally with a random intercept and bootstrap intervals.
/// A fit that does not converge is returned rather than raised.
pub fn fit_report(data: &FitDataset, resamples: usize, seed: u64, random_intercept: bool) -> Result<FitReport, CliError> {
    let mut report = if random_intercept {
        let ri = fit_probit_random_intercept(data, DEFAULT_NODES).map_err(fit_err)?;
        FitReport {
            method: "probit-random-intercept-aghq".into(),
            fit: ri.fit,
            sigma_subject: Some(ri.sigma_subject),
            n_subjects: Some(ri.n_subjects),
            quadrature_nodes: Some(ri.nodes),
            bootstrap: None,
        }
    } else {
        FitReport {
            method: "probit-ml".into(),
            fit: fit_probit(data).map_err(fit_err)?,
            sigma_subject: None,
            n_subjects: None,
            quadrature_nodes: None,
            bootstrap: None,
        }
    };
    if resamples > 0 && report.fit.converged {
        let b = bootstrap_fit(data, resamples, seed, Execution::Parallel).map_err(fit_err)?;
        report.fit.ci_jnd = Some(b.ci_jnd);
        report.fit.ci_pse = Some(b.ci_pse);
        report.bootstrap = Some(b);
    }
    Ok(report)
}

fn non_convergence(report: &FitReport) -> Result<(), CliError> {
    if report.fit.converged {
        Ok(())
    } else {
        Err(CliError::NonConvergence(report.fit.diagnostic.clone().unwrap_or_else(|| "fit did not converge".into())))
    }
}

pub fn cmd_fit(g: &GlobalArgs, a: &FitArgs) -> Result<(), CliError> {
    let cfg = g.load_config()?;
    let mut m = RunManifest::start("fit", &cfg);
    m.seed("bootstrap", a.seed);
    let mut data = FitDataset::default();
    for p in &a.input {
        m.input(p);
        let records: Vec<TrialRecord> =
            read_jsonl_log(open_read(p)?, TRIAL_LOG_SCHEMA).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        data.extend(records_to_dataset(&records));
    }
    let report = fit_report(&data, a.bootstrap, a.seed, a.random_intercept)?;
    write_json(&report, a.out.as_deref())?;
    if let Some(p) = &a.out {
        m.output(p);
    }
    m.finish(a.out.as_deref().map(beside))?;
    non_convergence(&report)
}

#[derive(Debug, Clone, Serialize)]
struct ConfusionReport {
    matrix: ConfusionMatrix,
    accuracy: Accuracy,
}

pub fn cmd_report(g: &GlobalArgs, a: &ReportArgs) -> Result<(), CliError> {
    let cfg = g.load_config()?;
    let mut m = RunManifest::start("report", &cfg);
    m.input(&a.input);
    let ctx = |e: crate::psychophysics::ExperimentError| CliError::Data(format!("{}: {e}", a.input.display()));
    if a.confusion {
        let trials: Vec<IdentificationTrial> = read_jsonl_log(open_read(&a.input)?, IDENTIFICATION_LOG_SCHEMA).map_err(ctx)?;
        let matrix = confusion_from_trials(&trials, &cfg.ladder).map_err(data_err)?;
        let acc = accuracy(&matrix).map_err(data_err)?;
        if let Some(p) = &a.csv {
            let mut w = BufWriter::new(File::create(p)?);
            matrix.write_csv(&mut w)?;
            w.flush()?;
            m.output(p);
        }
        write_json(&ConfusionReport { matrix, accuracy: acc }, a.out.as_deref())?;
    } else {
        let records: Vec<TrialRecord> = read_jsonl_log(open_read(&a.input)?, TRIAL_LOG_SCHEMA).map_err(ctx)?;
        let table = pairwise_success_table(&records, &cfg.ladder).map_err(data_err)?;
        for w in &table.warnings {
            eprintln!("warning: {w}");
        }
        write_json(&table, a.out.as_deref())?;
    }
    if let Some(p) = &a.out {
        m.output(p);
    }
    m.finish(a.out.as_deref().map(beside))?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SusReport {
    items: SusResponse,
    score: f64,
}

pub fn cmd_sus(g: &GlobalArgs, a: &SusArgs) -> Result<(), CliError> {
    let cfg = g.load_config()?;
    let m = RunManifest::start("sus", &cfg);
    let items: SusResponse = a.items.parse().map_err(data_err)?;
    write_json(&SusReport { items, score: sus_score(&items) }, None)?;
    m.finish(None)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct SubjectSummary {
    id: String,
    n_trials: usize,
    simulated_insensitive: bool,
    beta0: Option<f64>,
    beta1: Option<f64>,
    jnd_um: Option<f64>,
    pse_um: Option<f64>,
    flat_curve: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct DemoReport {
    seed: u64,
    config: Config,
    observer: ObserverModel,
    characterization: Vec<Characterization>,
    subjects: Vec<SubjectSummary>,
    excluded: Vec<String>,
    pooled: FitReport,
    random_intercept: Option<FitReport>,
    pairwise: crate::evaluation::PairwiseTable,
}

/// Run the whole chain from one root seed and write `report.json`, the texture
/// bank and one trial log per subject under `out`.
pub fn cmd_demo(g: &GlobalArgs, a: &DemoArgs) -> Result<(), CliError> {
    let mut cfg = g.load_config()?;
    if a.subjects == 0 {
        return Err(CliError::Data("--subjects must be positive".into()));
    }
    if a.insensitive >= a.subjects {
        return Err(CliError::Data(format!("--insensitive ({}) must be below --subjects ({})", a.insensitive, a.subjects)));
    }
    cfg.synth.seed = derive_seed(a.seed, "synth", 0);
    let mut m = RunManifest::start("demo", &cfg);
    m.seed("root", a.seed).seed("synth", cfg.synth.seed);

    let bank = TextureBank::synthesize(&cfg.ladder, &cfg.synth).map_err(data_err)?;
    for p in bank.save_dir(&a.out.join("textures")).map_err(data_err)? {
        m.output(&p);
    }

    let characterization = cfg
        .ladder
        .levels
        .iter()
        .enumerate()
        .map(|(level, spec)| {
            let (mut c, _, _) = characterize(&bank.traces[level][0], &cfg, derive_seed(a.seed, "characterize", level as u64))?;
            c.grade = Some(spec.fepa_grade.clone());
            Ok(c)
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let rend = renderer(&cfg, bank)?;
    let observer = calibrated_observer(&cfg, &rend, None)?;
    let mut ids: Vec<usize> = (0..a.subjects).collect();
    ids.shuffle(&mut crate::rng::derived_rng(a.seed, "insensitive", 0));
    let insensitive: Vec<bool> = {
        let mut v = vec![false; a.subjects];
        ids[..a.insensitive].iter().for_each(|&i| v[i] = true);
        v
    };

    let sessions = par::map_indexed(a.subjects, Execution::Parallel, |i| {
        let plan = build_plan_with(
            &cfg.ladder,
            cfg.experiment.trials_per_level,
            cfg.experiment.max_consecutive,
            derive_seed(a.seed, "plan", i as u64),
        )?
        .with_order(cfg.experiment.presentation_order);
        let model = if insensitive[i] {
            ObserverModel { noise_sigma: INSENSITIVE_SIGMA_UM, ..observer.clone() }
        } else {
            observer.clone()
        };
        let source = ResponseSource::Observer { model, seed: derive_seed(a.seed, "responses", i as u64) };
        run_experiment(&plan, &rend, &source, Some(&format!("S{:02}", i + 1)), &mut Vec::new())
    });

    let logs = a.out.join("logs");
    std::fs::create_dir_all(&logs)?;
    let mut subjects = Vec::new();
    let mut kept = Vec::new();
    let mut excluded = Vec::new();
    for (i, session) in sessions.into_iter().enumerate() {
        let records = session.map_err(data_err)?;
        let id = format!("S{:02}", i + 1);
        let path = logs.join(format!("{id}.jsonl"));
        let mut sink = JsonlWriter::new(BufWriter::new(File::create(&path)?), TRIAL_LOG_SCHEMA)?;
        for r in &records {
            crate::psychophysics::TrialSink::record(&mut sink, r)?;
        }
        m.output(&path);
        let data = records_to_dataset(&records);
        let summary = match fit_probit(&data) {
            Ok(fit) => {
                let flat = detect_flat_curve(&fit, &data, &cfg.flat_curve);
                SubjectSummary {
                    id: id.clone(),
                    n_trials: data.len(),
                    simulated_insensitive: insensitive[i],
                    beta0: Some(fit.beta0),
                    beta1: Some(fit.beta1),
                    jnd_um: fit.jnd_um,
                    pse_um: fit.pse_um,
                    flat_curve: flat,
                    note: fit.diagnostic,
                }
            }
            Err(e) => SubjectSummary {
                id: id.clone(),
                n_trials: data.len(),
                simulated_insensitive: insensitive[i],
                beta0: None,
                beta1: None,
                jnd_um: None,
                pse_um: None,
                flat_curve: true,
                note: Some(e.to_string()),
            },
        };
        if summary.flat_curve {
            excluded.push(id);
        } else {
            kept.extend(records);
        }
        subjects.push(summary);
    }
    if kept.is_empty() {
        return Err(CliError::Data("every subject was excluded as a flat curve".into()));
    }
    let pooled_data = records_to_dataset(&kept);
    let pooled = fit_report(&pooled_data, a.bootstrap, derive_seed(a.seed, "bootstrap", 0), false)?;
    let random_intercept = match fit_report(&pooled_data, 0, 0, true) {
        Ok(r) => Some(r),
        Err(CliError::Data(_)) => None,
        Err(e) => return Err(e),
    };
    let pairwise = pairwise_success_table(&kept, &cfg.ladder).map_err(data_err)?;
    let report = DemoReport {
        seed: a.seed,
        config: cfg.clone(),
        observer,
        characterization,
        subjects,
        excluded,
        pooled,
        random_intercept,
        pairwise,
    };
    let report_path = a.out.join("report.json");
    write_json(&report, Some(&report_path))?;
    m.output(&report_path);
    m.finish(Some(a.out.join("manifest.json")))?;
    non_convergence(&report.pooled)
}

