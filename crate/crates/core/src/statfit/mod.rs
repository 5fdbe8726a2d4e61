//! Psychometric function fitting: probit maximum likelihood, random-intercept
//! GLMM, JND/PSE extraction, bootstrap intervals and flat-curve screening.

mod bootstrap;
mod glmm;
pub mod normal;
mod probit;
pub mod quadrature;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bootstrap::{bootstrap_ci, bootstrap_fit, percentile, BootstrapResult, Statistic};
pub use glmm::{fit_probit_random_intercept, marginal_log_likelihood, RandomInterceptFit, DEFAULT_NODES};
pub use probit::{
    detect_flat_curve, fit_groups, fit_probit, jnd, log_likelihood, predict_p, pse, score, FlatCurveRule,
};

/// Minimum number of trials accepted by the fitting routines.
pub const MIN_TRIALS: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("responses contain a single class; no finite estimate exists")]
    SingleClass,
    #[error("all stimulus values are equal; slope is not identifiable")]
    DegenerateX,
    #[error("need at least {MIN_TRIALS} trials, got {0}")]
    TooFewTrials(usize),
    #[error("slope {0} is not positive; JND/PSE undefined (flat or inverted curve)")]
    UndefinedJnd(f64),
    #[error("{failed} of {requested} bootstrap resamples failed; interval unreliable")]
    UnreliableCi { failed: usize, requested: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitTrial {
    /// Stimulus value (grit size in µm).
    pub x: f64,
    pub y: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject: Option<String>,
}

/// Binomial summary of all trials sharing one stimulus value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Group {
    pub x: f64,
    pub n: u32,
    pub k: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDataset {
    pub trials: Vec<FitTrial>,
}

impl FitDataset {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (f64, bool)>) -> Self {
        FitDataset { trials: pairs.into_iter().map(|(x, y)| FitTrial { x, y, subject: None }).collect() }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn extend(&mut self, other: FitDataset) {
        self.trials.extend(other.trials);
    }

    /// Trials aggregated by stimulus value, ascending in x.
    pub fn groups(&self) -> Vec<Group> {
        group_trials(self.trials.iter().map(|t| (t.x, t.y)))
    }

    /// Per-subject datasets keyed by subject id; trials without id share the key "".
    pub fn by_subject(&self) -> BTreeMap<String, FitDataset> {
        let mut out: BTreeMap<String, FitDataset> = BTreeMap::new();
        for t in &self.trials {
            out.entry(t.subject.clone().unwrap_or_default()).or_default().trials.push(t.clone());
        }
        out
    }

    pub fn scaled(&self, c: f64) -> FitDataset {
        FitDataset { trials: self.trials.iter().map(|t| FitTrial { x: t.x * c, ..t.clone() }).collect() }
    }

    pub fn label_flipped(&self) -> FitDataset {
        FitDataset { trials: self.trials.iter().map(|t| FitTrial { y: !t.y, ..t.clone() }).collect() }
    }

    /// Indices of trials grouped by stimulus value (bootstrap strata).
    pub fn strata(&self) -> Vec<(f64, Vec<usize>)> {
        let mut idx: Vec<usize> = (0..self.trials.len()).collect();
        idx.sort_by(|&a, &b| self.trials[a].x.total_cmp(&self.trials[b].x));
        let mut out: Vec<(f64, Vec<usize>)> = Vec::new();
        for i in idx {
            let x = self.trials[i].x;
            match out.last_mut() {
                Some((gx, v)) if *gx == x => v.push(i),
                _ => out.push((x, vec![i])),
            }
        }
        out
    }
}

pub(crate) fn group_trials(trials: impl Iterator<Item = (f64, bool)>) -> Vec<Group> {
    let mut v: Vec<(f64, bool)> = trials.collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<Group> = Vec::new();
    for (x, y) in v {
        match out.last_mut() {
            Some(g) if g.x == x => {
                g.n += 1;
                g.k += u32::from(y);
            }
            _ => out.push(Group { x, n: 1, k: u32::from(y) }),
        }
    }
    out
}

/// Probit psychometric fit: `P(rougher) = Φ(beta0 + beta1 * x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsychometricFit {
    pub beta0: f64,
    pub beta1: f64,
    /// `1/beta1`; absent when `beta1 <= 0`.
    pub jnd_um: Option<f64>,
    /// `-beta0/beta1`; absent when `beta1 <= 0`.
    pub pse_um: Option<f64>,
    pub ci_jnd: Option<(f64, f64)>,
    pub ci_pse: Option<(f64, f64)>,
    /// Wald standard errors from the observed information.
    pub se_beta0: f64,
    pub se_beta1: f64,
    pub log_likelihood: f64,
    pub converged: bool,
    pub iterations: u32,
    pub n_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
}

impl PsychometricFit {
    pub fn jnd(&self) -> Result<f64, FitError> {
        jnd(self.beta1)
    }

    pub fn pse(&self) -> Result<f64, FitError> {
        pse(self.beta0, self.beta1)
    }

    pub fn predict_p(&self, x: f64) -> f64 {
        predict_p(self, x)
    }
}
