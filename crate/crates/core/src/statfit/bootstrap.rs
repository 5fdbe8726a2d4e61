//! Stratified case-resampling bootstrap with percentile intervals.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::probit::fit_groups;
use super::{fit_probit, FitDataset, FitError, Group};
use crate::par::{self, Execution};
use crate::rng;

/// Attempts per resample before the whole bootstrap is declared unreliable.
const MAX_ATTEMPTS: u32 = 100;
const MAX_FAILED_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Jnd,
    Pse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub ci_jnd: (f64, f64),
    pub ci_pse: (f64, f64),
    pub n_resamples: usize,
    /// Resamples whose fit failed and were redrawn.
    pub failed_resamples: usize,
    pub seed: u64,
    pub interval: String,
}

/// Linear-interpolation quantile of sorted values.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

fn resample_groups(strata: &[(f64, Vec<bool>)], rng: &mut rng::Rng) -> Vec<Group> {
    strata
        .iter()
        .map(|(x, ys)| {
            let m = ys.len();
            let k = (0..m).filter(|_| ys[rng.random_range(0..m)]).count();
            Group { x: *x, n: m as u32, k: k as u32 }
        })
        .collect()
}

/// Bootstrap JND and PSE together from one set of resamples.
///
/// Trials are resampled with replacement within each stimulus level. A
/// resample counts as failed when its fit does not converge or its slope is
/// not positive; it is then redrawn from the next derived seed. Resample `i`
/// only depends on `(seed, i)`, so the interval is identical for any
/// execution mode or thread count.
pub fn bootstrap_fit(data: &FitDataset, n_resamples: usize, seed: u64, exec: Execution) -> Result<BootstrapResult, FitError> {
    if n_resamples < 2 {
        return Err(FitError::InvalidArgument("need at least 2 resamples".into()));
    }
    let base = fit_probit(data)?;
    if !base.converged {
        return Err(FitError::InvalidArgument(base.diagnostic.unwrap_or_else(|| "fit did not converge".into())));
    }
    let strata: Vec<(f64, Vec<bool>)> = data
        .strata()
        .into_iter()
        .map(|(x, idx)| (x, idx.into_iter().map(|i| data.trials[i].y).collect()))
        .collect();
    let n_trials = data.len();

    let draws: Vec<(Option<(f64, f64)>, u32)> = par::map_indexed(n_resamples, exec, |i| {
        let root = rng::derive_seed(seed, "bootstrap", i as u64);
        for attempt in 0..MAX_ATTEMPTS {
            let mut r = rng::derived_rng(root, "attempt", u64::from(attempt));
            let groups = resample_groups(&strata, &mut r);
            if let Ok(fit) = fit_groups(&groups, n_trials) {
                if fit.converged && fit.beta1 > 0.0 {
                    return (Some((1.0 / fit.beta1, -fit.beta0 / fit.beta1)), attempt);
                }
            }
        }
        (None, MAX_ATTEMPTS)
    });

    let failed: usize = draws.iter().map(|(_, f)| *f as usize).sum();
    if draws.iter().any(|(v, _)| v.is_none()) || failed as f64 > MAX_FAILED_FRACTION * n_resamples as f64 {
        return Err(FitError::UnreliableCi { failed, requested: n_resamples });
    }
    let (mut jnds, mut pses): (Vec<f64>, Vec<f64>) = draws.into_iter().filter_map(|(v, _)| v).unzip();
    jnds.sort_by(f64::total_cmp);
    pses.sort_by(f64::total_cmp);
    Ok(BootstrapResult {
        ci_jnd: (percentile(&jnds, 0.025), percentile(&jnds, 0.975)),
        ci_pse: (percentile(&pses, 0.025), percentile(&pses, 0.975)),
        n_resamples,
        failed_resamples: failed,
        seed,
        interval: "percentile".into(),
    })
}

/// 95% percentile interval of one statistic.
pub fn bootstrap_ci(
    data: &FitDataset,
    statistic: Statistic,
    n_resamples: usize,
    seed: u64,
    exec: Execution,
) -> Result<(f64, f64), FitError> {
    let r = bootstrap_fit(data, n_resamples, seed, exec)?;
    Ok(match statistic {
        Statistic::Jnd => r.ci_jnd,
        Statistic::Pse => r.ci_pse,
    })
}
