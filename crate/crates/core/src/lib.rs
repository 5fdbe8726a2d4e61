//! Hardware-free vibrotactile texture feedback chain.
//!
//! Texture acceleration traces are synthesized (or loaded), pushed through a
//! filter / reduce / limit / PWM pipeline into a simulated voice-coil actuator,
//! presented to simulated observers in constant-stimuli experiments, and the
//! resulting trial logs are fitted with probit psychometric functions.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod actuator;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod evaluation;
pub mod par;
pub mod psychophysics;
pub mod rng;
pub mod statfit;
pub mod texture;

pub use actuator::{ActuatorModel, RenderComparison};
pub use dsp::{PipelineConfig, PwmFrame, PwmStream, Reduction, Signal};
pub use psychophysics::{ExperimentPlan, ObserverModel, TrialRecord};
pub use statfit::{FitDataset, PsychometricFit};
pub use texture::{AccelSample, AccelTrace, SandpaperSpec, SynthParams};
