//! Tool-wide JSON configuration.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actuator::ActuatorModel;
use crate::dsp::PipelineConfig;
use crate::psychophysics::{IdentificationConfig, OrderPolicy, MAX_CONSECUTIVE, TARGET_JND_UM, TARGET_PSE_UM, TRIALS_PER_LEVEL};
use crate::statfit::FlatCurveRule;
use crate::texture::{Ladder, SynthParams};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "VIBROTACT_CONFIG";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config {path}: {source}")]
    Parse { path: String, source: serde_json::Error },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Simulated observer settings. The percept map is calibrated against the
/// rendered bank so that the psychometric function over grit has the target
/// JND and PSE; `noise_sigma` overrides the calibrated internal noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObserverSettings {
    pub target_jnd_um: f64,
    pub target_pse_um: f64,
    pub lapse_rate: f64,
    pub noise_sigma: Option<f64>,
}

impl Default for ObserverSettings {
    fn default() -> Self {
        ObserverSettings { target_jnd_um: TARGET_JND_UM, target_pse_um: TARGET_PSE_UM, lapse_rate: 0.0, noise_sigma: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSettings {
    pub trials_per_level: usize,
    pub max_consecutive: usize,
    pub presentation_order: OrderPolicy,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            trials_per_level: TRIALS_PER_LEVEL,
            max_consecutive: MAX_CONSECUTIVE,
            presentation_order: OrderPolicy::Randomized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub ladder: Ladder,
    pub synth: SynthParams,
    pub pipeline: PipelineConfig,
    pub actuator: ActuatorModel,
    pub observer: ObserverSettings,
    pub experiment: ExperimentSettings,
    pub identification: IdentificationConfig,
    pub flat_curve: FlatCurveRule,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let cfg: Config =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.display().to_string(), source })?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Explicit path, else the environment variable, else built-in defaults.
    pub fn resolve(path: Option<&Path>) -> Result<Config, ConfigError> {
        match path {
            Some(p) => Config::load(p),
            None => match std::env::var_os(CONFIG_ENV) {
                Some(p) if !p.is_empty() => Config::load(Path::new(&p)),
                _ => Ok(Config::default()),
            },
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.ladder.validate().map_err(|e| inv(&e))?;
        self.synth.validate().map_err(|e| inv(&e))?;
        let rate = self.synth.rate_hz;
        self.pipeline.validate(rate).map_err(|e| inv(&e))?;
        self.actuator.validate(rate).map_err(|e| inv(&e))?;
        if self.pipeline.frame_rate_hz < 2.0 * self.actuator.band_hi_hz {
            return Err(ConfigError::Invalid(format!(
                "frame rate {} Hz is below twice the actuator band edge {} Hz",
                self.pipeline.frame_rate_hz, self.actuator.band_hi_hz
            )));
        }
        let o = &self.observer;
        if !(o.target_jnd_um > 0.0 && o.target_jnd_um.is_finite() && o.target_pse_um.is_finite()) {
            return Err(ConfigError::Invalid("observer JND must be positive and PSE finite".into()));
        }
        if !(0.0..=0.1).contains(&o.lapse_rate) {
            return Err(ConfigError::Invalid(format!("lapse_rate must lie in [0, 0.1], got {}", o.lapse_rate)));
        }
        if let Some(s) = o.noise_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(ConfigError::Invalid(format!("noise_sigma must be positive, got {s}")));
            }
        }
        if self.experiment.trials_per_level == 0 || self.experiment.max_consecutive == 0 {
            return Err(ConfigError::Invalid("trials per level and consecutive cap must be positive".into()));
        }
        if !(self.identification.degradation > 1.0) || self.identification.n_reps == 0 {
            return Err(ConfigError::Invalid("identification needs degradation > 1 and at least one rep".into()));
        }
        if !(self.flat_curve.alpha > 0.0 && self.flat_curve.alpha < 1.0) {
            return Err(ConfigError::Invalid(format!("flat-curve alpha must lie in (0, 1), got {}", self.flat_curve.alpha)));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = Config::default();
        c.validate().unwrap();
        let json = serde_json::to_string_pretty(&c).unwrap();
        let back: Config = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn partial_documents_fill_defaults() {
        let c: Config = serde_json::from_str(r#"{"pipeline": {"hp_cutoff_hz": 40.0, "reduction": "dft321"}}"#).unwrap();
        assert_eq!(c.pipeline.hp_cutoff_hz, 40.0);
        assert_eq!(c.pipeline.lp_cutoff_hz, 500.0);
        assert_eq!(c.synth, SynthParams::default());
    }

    #[test]
    fn unknown_sections_rejected() {
        assert!(serde_json::from_str::<Config>(r#"{"pipelne": {}}"#).is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut c = Config::default();
        c.pipeline.lp_cutoff_hz = 1000.0;
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
        let mut c = Config::default();
        c.identification.degradation = 1.0;
        assert!(c.validate().is_err());
        let mut c = Config::default();
        c.pipeline.frame_rate_hz = 800.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn load_reports_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, "{ not json").unwrap();
        let err = Config::load(&p).unwrap_err().to_string();
        assert!(err.contains("c.json"), "{err}");
        assert!(Config::load(&dir.path().join("missing.json")).is_err());
    }
}
