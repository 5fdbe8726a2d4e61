//! Fixed-effect probit regression by Newton-Raphson.

use serde::{Deserialize, Serialize};

use super::normal::{cdf, ln_cdf, mills, quantile};
use super::{FitDataset, FitError, Group, PsychometricFit, MIN_TRIALS};

const MAX_ITER: u32 = 100;
/// Stop once a full Newton step is predicted to gain less than this.
const LL_TOL: f64 = 1e-12;

pub fn jnd(beta1: f64) -> Result<f64, FitError> {
    if beta1 > 0.0 {
        Ok(1.0 / beta1)
    } else {
        Err(FitError::UndefinedJnd(beta1))
    }
}

pub fn pse(beta0: f64, beta1: f64) -> Result<f64, FitError> {
    if beta1 > 0.0 {
        Ok(-beta0 / beta1)
    } else {
        Err(FitError::UndefinedJnd(beta1))
    }
}

pub fn predict_p(fit: &PsychometricFit, x: f64) -> f64 {
    cdf(fit.beta0 + fit.beta1 * x)
}

fn group_ll(g: &Group, eta: f64) -> f64 {
    let mut ll = 0.0;
    if g.k > 0 {
        ll += f64::from(g.k) * ln_cdf(eta);
    }
    if g.n > g.k {
        ll += f64::from(g.n - g.k) * ln_cdf(-eta);
    }
    ll
}

/// First and (negated) second derivative of a group's log-likelihood in eta.
pub(crate) fn group_derivs(g: &Group, eta: f64) -> (f64, f64) {
    let (k, m) = (f64::from(g.k), f64::from(g.n - g.k));
    let (lp, lm) = (mills(eta), mills(-eta));
    let d1 = k * lp - m * lm;
    let w = k * lp * (eta + lp) + m * lm * (lm - eta);
    (d1, w)
}

pub(crate) fn groups_ll(groups: &[Group], b0: f64, b1: f64) -> f64 {
    groups.iter().map(|g| group_ll(g, b0 + b1 * g.x)).sum()
}

pub fn log_likelihood(data: &FitDataset, beta0: f64, beta1: f64) -> f64 {
    groups_ll(&data.groups(), beta0, beta1)
}

/// Analytic gradient of the log-likelihood in (beta0, beta1).
pub fn score(data: &FitDataset, beta0: f64, beta1: f64) -> [f64; 2] {
    groups_score(&data.groups(), beta0, beta1)
}

fn groups_score(groups: &[Group], b0: f64, b1: f64) -> [f64; 2] {
    groups.iter().fold([0.0, 0.0], |acc, g| {
        let (d1, _) = group_derivs(g, b0 + b1 * g.x);
        [acc[0] + d1, acc[1] + d1 * g.x]
    })
}

/// Observed information (negated Hessian) as (i00, i01, i11).
fn information(groups: &[Group], b0: f64, b1: f64) -> (f64, f64, f64) {
    groups.iter().fold((0.0, 0.0, 0.0), |(a, b, c), g| {
        let (_, w) = group_derivs(g, b0 + b1 * g.x);
        (a + w, b + w * g.x, c + w * g.x * g.x)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Separation {
    None,
    Increasing,
    Decreasing,
}

fn separation(groups: &[Group]) -> Separation {
    let max_x = |pred: &dyn Fn(&Group) -> bool| groups.iter().filter(|g| pred(g)).map(|g| g.x).fold(f64::NEG_INFINITY, f64::max);
    let min_x = |pred: &dyn Fn(&Group) -> bool| groups.iter().filter(|g| pred(g)).map(|g| g.x).fold(f64::INFINITY, f64::min);
    let has_zero = |g: &Group| g.k < g.n;
    let has_one = |g: &Group| g.k > 0;
    if max_x(&has_zero) <= min_x(&has_one) {
        Separation::Increasing
    } else if max_x(&has_one) <= min_x(&has_zero) {
        Separation::Decreasing
    } else {
        Separation::None
    }
}

/// Weighted least squares of empirical probits on x, clamping proportions to
/// `[0.5/n, 1 - 0.5/n]`.
fn initial_estimate(groups: &[Group]) -> (f64, f64) {
    let (mut sw, mut sx, mut sz, mut sxx, mut sxz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for g in groups {
        let n = f64::from(g.n);
        let p = (f64::from(g.k) / n).clamp(0.5 / n, 1.0 - 0.5 / n);
        let z = if n > 1.0 { quantile(p) } else { 0.0 };
        sw += n;
        sx += n * g.x;
        sz += n * z;
        sxx += n * g.x * g.x;
        sxz += n * g.x * z;
    }
    let var = sxx - sx * sx / sw;
    let b1 = if var > 0.0 { (sxz - sx * sz / sw) / var } else { 0.0 };
    let b0 = (sz - b1 * sx) / sw;
    (b0, b1)
}

/// Fit on pre-aggregated groups. Used by the bootstrap to avoid regrouping.
pub fn fit_groups(groups: &[Group], n_trials: usize) -> Result<PsychometricFit, FitError> {
    let total: u32 = groups.iter().map(|g| g.n).sum();
    let positives: u32 = groups.iter().map(|g| g.k).sum();
    if positives == 0 || positives == total {
        return Err(FitError::SingleClass);
    }
    if groups.len() < 2 {
        return Err(FitError::DegenerateX);
    }
    let sep = separation(groups);

    let (mut b0, mut b1) = initial_estimate(groups);
    let mut ll = groups_ll(groups, b0, b1);
    let mut converged = false;
    let mut iterations = 0;
    let mut diagnostic = None;
    while iterations < MAX_ITER {
        iterations += 1;
        let [g0, g1] = groups_score(groups, b0, b1);
        let (a, b, c) = information(groups, b0, b1);
        let det = a * c - b * b;
        if !(det > 0.0) || !det.is_finite() {
            diagnostic = Some("singular information matrix".to_string());
            break;
        }
        let s0 = (c * g0 - b * g1) / det;
        let s1 = (a * g1 - b * g0) / det;
        // Newton decrement: twice the predicted log-likelihood gain of a full step.
        if g0 * s0 + g1 * s1 < 2.0 * LL_TOL {
            b0 += s0;
            b1 += s1;
            ll = groups_ll(groups, b0, b1);
            converged = true;
            break;
        }
        let mut t = 1.0;
        let (mut n0, mut n1, mut nll);
        loop {
            n0 = b0 + t * s0;
            n1 = b1 + t * s1;
            nll = groups_ll(groups, n0, n1);
            if nll >= ll || t < 1e-12 {
                break;
            }
            t *= 0.5;
        }
        if !(nll >= ll) {
            // No ascent along the Newton direction: already at the optimum to machine precision.
            converged = true;
            break;
        }
        b0 = n0;
        b1 = n1;
        ll = nll;
    }
    if sep != Separation::None {
        converged = false;
        diagnostic = Some(match sep {
            Separation::Increasing => "complete separation (increasing): estimates diverge",
            _ => "complete separation (decreasing): estimates diverge",
        }
        .to_string());
    } else if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("no convergence after {MAX_ITER} iterations"));
    }

    let (a, b, c) = information(groups, b0, b1);
    let det = a * c - b * b;
    let (se_beta0, se_beta1) = if det > 0.0 { ((c / det).sqrt(), (a / det).sqrt()) } else { (f64::NAN, f64::NAN) };
    Ok(PsychometricFit {
        beta0: b0,
        beta1: b1,
        jnd_um: jnd(b1).ok(),
        pse_um: pse(b0, b1).ok(),
        ci_jnd: None,
        ci_pse: None,
        se_beta0,
        se_beta1,
        log_likelihood: ll,
        converged,
        iterations,
        n_trials,
        diagnostic,
    })
}

/// Maximum-likelihood probit fit of `P(y=1) = Φ(beta0 + beta1 x)`.
///
/// Iterates Newton-Raphson with step halving until the predicted log-likelihood
/// gain of a full step falls below 1e-12 or 100 iterations pass. Separated data still returns a fit
/// but with `converged = false` and a diagnostic.
pub fn fit_probit(data: &FitDataset) -> Result<PsychometricFit, FitError> {
    if data.len() < MIN_TRIALS {
        return Err(FitError::TooFewTrials(data.len()));
    }
    if data.trials.iter().any(|t| !t.x.is_finite()) {
        return Err(FitError::InvalidArgument("non-finite stimulus value".into()));
    }
    let groups = data.groups();
    let positives: u32 = groups.iter().map(|g| g.k).sum();
    if positives == 0 || positives as usize == data.len() {
        return Err(FitError::SingleClass);
    }
    if groups.len() < 2 {
        return Err(FitError::DegenerateX);
    }
    fit_groups(&groups, data.len())
}

/// Outlier rule for "flat" psychometric curves.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FlatCurveRule {
    /// One-sided Wald test level for `beta1 > 0`.
    pub alpha: f64,
    /// JND above this counts as flat; `None` uses the stimulus range of the data.
    pub max_jnd_um: Option<f64>,
}

impl Default for FlatCurveRule {
    fn default() -> Self {
        FlatCurveRule { alpha: 0.05, max_jnd_um: None }
    }
}

/// True when the slope is not significantly positive or the JND exceeds the
/// stimulus range.
pub fn detect_flat_curve(fit: &PsychometricFit, data: &FitDataset, rule: &FlatCurveRule) -> bool {
    if let Some(d) = &fit.diagnostic {
        if d.contains("separation") {
            return !d.contains("increasing");
        }
    }
    if !(fit.beta1 > 0.0) {
        return true;
    }
    let range = rule.max_jnd_um.unwrap_or_else(|| {
        let (lo, hi) = data.trials.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), t| (lo.min(t.x), hi.max(t.x)));
        hi - lo
    });
    let z_crit = quantile(1.0 - rule.alpha);
    let z = fit.beta1 / fit.se_beta1;
    !(z > z_crit) || 1.0 / fit.beta1 > range
}
