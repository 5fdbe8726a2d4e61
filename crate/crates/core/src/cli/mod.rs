//! Command-line front end. Each subcommand is a plain function over parsed
//! arguments so it can be driven from tests without spawning a process.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::config::{Config, ConfigError, CONFIG_ENV};
use crate::dsp::Reduction;

pub use commands::{
    cmd_characterize, cmd_demo, cmd_experiment, cmd_fit, cmd_identify, cmd_render, cmd_report, cmd_sus, cmd_synth,
    FitReport,
};
pub use manifest::RunManifest;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    NonConvergence(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NonConvergence(_) => 3,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub(crate) fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "vibrotact", version, about = "Vibrotactile texture rendering and psychophysics toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON config file
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Worker threads for parallel stages (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    /// High-pass corner, Hz
    #[arg(long, global = true)]
    pub hp_cutoff: Option<f64>,
    /// Low-pass corner, Hz
    #[arg(long, global = true)]
    pub lp_cutoff: Option<f64>,
    /// 3-axis to 1-axis reduction
    #[arg(long, global = true)]
    pub reduction: Option<Reduction>,
    /// Duty per m/s²
    #[arg(long, global = true)]
    pub scale_k: Option<f64>,
    /// Duty ceiling in (0, 1]
    #[arg(long, global = true)]
    pub duty_max: Option<f64>,
    /// Limiter ceiling, m/s²
    #[arg(long, global = true)]
    pub limiter_ceiling: Option<f64>,
    /// PWM frame rate, Hz
    #[arg(long, global = true)]
    pub frame_rate: Option<f64>,
}

impl GlobalArgs {
    /// Config file (or defaults) with command-line overrides applied, validated.
    pub fn load_config(&self) -> Result<Config, CliError> {
        let mut cfg = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        let p = &mut cfg.pipeline;
        if let Some(v) = self.hp_cutoff {
            p.hp_cutoff_hz = v;
        }
        if let Some(v) = self.lp_cutoff {
            p.lp_cutoff_hz = v;
        }
        if let Some(v) = self.reduction {
            p.reduction = v;
        }
        if let Some(v) = self.scale_k {
            p.scale_k = v;
        }
        if let Some(v) = self.duty_max {
            p.duty_max = v;
        }
        if let Some(v) = self.limiter_ceiling {
            p.limiter_ceiling = v;
        }
        if let Some(v) = self.frame_rate {
            p.frame_rate_hz = v;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize the texture bank (every grade, two variants) as CSV traces
    Synth(SynthArgs),
    /// Run a trace through the pipeline and the actuator model
    Render(RenderArgs),
    /// Compare a pipeline signal with its rendered actuator output
    Characterize(CharacterizeArgs),
    /// Run a constant-stimuli session and write a JSON-lines trial log
    Experiment(ExperimentArgs),
    /// Run a texture identification session
    Identify(IdentifyArgs),
    /// Fit a probit psychometric function to trial logs
    Fit(FitArgs),
    /// Confusion matrix or pairwise success table from a log
    Report(ReportArgs),
    /// Score a System Usability Scale questionnaire
    Sus(SusArgs),
    /// Synthesize, render, characterize, run subjects and fit in one go
    #[command(alias = "pipeline-demo")]
    Demo(DemoArgs),
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "textures")]
    pub out: PathBuf,
    /// Overrides the config's synthesis seed
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args)]
pub struct RenderArgs {
    /// Index-finger trace (CSV t,ax,ay,az)
    #[arg(long)]
    pub input: PathBuf,
    /// Optional thumb trace; without it the thumb channel is silent
    #[arg(long)]
    pub thumb: Option<PathBuf>,
    #[arg(long, default_value = "render")]
    pub out: PathBuf,
    /// Feed the pipeline in chunks of this many samples
    #[arg(long)]
    pub stream_chunk: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct CharacterizeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Report path; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write t,s,r samples here
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct BankArgs {
    /// Directory of bank traces; synthesized from the config when absent
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Observer internal noise in µm; defaults to the calibrated value
    #[arg(long)]
    pub observer_sigma: Option<f64>,
    #[arg(long, default_value = "trials.jsonl")]
    pub out: PathBuf,
    /// Scripted responses (one 0/1 per line) instead of a simulated observer
    #[arg(long)]
    pub responses: Option<PathBuf>,
    #[arg(long)]
    pub subject: Option<String>,
    #[command(flatten)]
    pub bank: BankArgs,
}

#[derive(Debug, Clone, Args)]
pub struct IdentifyArgs {
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub feedback: Switch,
    /// Presentations per texture; overrides the config
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub observer_sigma: Option<f64>,
    #[arg(long, default_value = "identification.jsonl")]
    pub out: PathBuf,
    #[command(flatten)]
    pub bank: BankArgs,
}

#[derive(Debug, Clone, Args)]
pub struct FitArgs {
    /// Trial logs; several are pooled
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Bootstrap resamples for the JND/PSE intervals (0 = none)
    #[arg(long, default_value_t = 0)]
    pub bootstrap: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Fit a per-subject random intercept
    #[arg(long)]
    pub random_intercept: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Confusion matrix from an identification log
    #[arg(long, conflicts_with = "pairwise", required_unless_present = "pairwise")]
    pub confusion: bool,
    /// Pairwise success table from a trial log
    #[arg(long)]
    pub pairwise: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Confusion matrix CSV
    #[arg(long, requires = "confusion")]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SusArgs {
    /// Ten comma-separated answers in 1..=5
    #[arg(long)]
    pub items: String,
}

#[derive(Debug, Clone, Args)]
pub struct DemoArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 15)]
    pub subjects: usize,
    /// Subjects simulated without sensitivity to the stimulus
    #[arg(long, default_value_t = 3)]
    pub insensitive: usize,
    #[arg(long, default_value_t = 2000)]
    pub bootstrap: usize,
    #[arg(long, default_value = "demo")]
    pub out: PathBuf,
}

/// Parse `args` (including the program name) and run the command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(CliError::Usage(e.to_string())),
    };
    let jobs = cli.global.jobs;
    crate::par::with_jobs(jobs, move || dispatch(&cli))
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Synth(a) => cmd_synth(g, a),
        Command::Render(a) => cmd_render(g, a),
        Command::Characterize(a) => cmd_characterize(g, a),
        Command::Experiment(a) => cmd_experiment(g, a),
        Command::Identify(a) => cmd_identify(g, a),
        Command::Fit(a) => cmd_fit(g, a),
        Command::Report(a) => cmd_report(g, a),
        Command::Sus(a) => cmd_sus(g, a),
        Command::Demo(a) => cmd_demo(g, a),
    }
}

/// Process entry point: runs the CLI and maps errors to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match run(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().trim_end());
            ExitCode::from(e.exit_code())
        }
    }
}
