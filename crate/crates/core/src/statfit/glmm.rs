//! Probit GLMM with a Gaussian random intercept per subject, integrated by
//! adaptive Gauss-Hermite quadrature.

use serde::{Deserialize, Serialize};

use super::normal::ln_cdf;
use super::probit::{fit_groups, group_derivs};
use super::quadrature::gauss_hermite;
use super::{fit_probit, group_trials, FitDataset, FitError, Group, PsychometricFit, MIN_TRIALS};

pub const DEFAULT_NODES: usize = 20;
const MAX_ITER: u32 = 200;
const LL_TOL: f64 = 1e-10;
const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const TAU_MIN: f64 = -13.815_510_557_964_274; // ln 1e-6
const TAU_MAX: f64 = std::f64::consts::LN_10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomInterceptFit {
    pub fit: PsychometricFit,
    /// Standard deviation of the per-subject intercept (probit units).
    pub sigma_subject: f64,
    pub n_subjects: usize,
    pub nodes: usize,
}

struct Rule {
    nodes: Vec<f64>,
    ln_weights: Vec<f64>,
}

impl Rule {
    fn new(n: usize) -> Self {
        let (x, w) = gauss_hermite(n);
        // ln(w) + z² folds the exp(-z²) weight back out.
        let ln_weights = x.iter().zip(&w).map(|(z, w)| w.ln() + z * z).collect();
        Rule { nodes: x, ln_weights }
    }
}

fn ll_at(groups: &[Group], b0: f64, b1: f64, shift: f64) -> f64 {
    groups
        .iter()
        .map(|g| {
            let eta = b0 + b1 * g.x + shift;
            let mut ll = 0.0;
            if g.k > 0 {
                ll += f64::from(g.k) * ln_cdf(eta);
            }
            if g.n > g.k {
                ll += f64::from(g.n - g.k) * ln_cdf(-eta);
            }
            ll
        })
        .sum()
}

/// ln ∫ Π p(y | u) φ(u) du for one subject.
fn subject_log_integral(groups: &[Group], b0: f64, b1: f64, sigma: f64, rule: &Rule) -> f64 {
    if sigma <= 0.0 {
        return ll_at(groups, b0, b1, 0.0);
    }
    let info = |u: f64| {
        groups.iter().fold((0.0, 0.0), |(d1, w), g| {
            let (a, b) = group_derivs(g, b0 + b1 * g.x + sigma * u);
            (d1 + a, w + b)
        })
    };
    let mut u = 0.0;
    for _ in 0..100 {
        let (d1, w) = info(u);
        let step = (sigma * d1 - u) / (sigma * sigma * w + 1.0);
        u += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    let (_, w) = info(u);
    let spread = std::f64::consts::SQRT_2 / (sigma * sigma * w + 1.0).sqrt();
    let terms: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.ln_weights)
        .map(|(z, lw)| {
            let v = u + spread * z;
            lw + ll_at(groups, b0, b1, sigma * v) - 0.5 * v * v - LN_SQRT_2PI
        })
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln() + spread.ln()
}

fn total_ll(subjects: &[Vec<Group>], b0: f64, b1: f64, sigma: f64, rule: &Rule) -> f64 {
    subjects.iter().map(|g| subject_log_integral(g, b0, b1, sigma, rule)).sum()
}

fn subject_groups(data: &FitDataset, center: f64, scale: f64) -> Vec<Vec<Group>> {
    data.by_subject()
        .into_values()
        .map(|d| group_trials(d.trials.iter().map(|t| ((t.x - center) / scale, t.y))))
        .collect()
}

/// Marginal log-likelihood of the random-intercept model at the given parameters.
pub fn marginal_log_likelihood(data: &FitDataset, beta0: f64, beta1: f64, sigma: f64, nodes: usize) -> f64 {
    total_ll(&subject_groups(data, 0.0, 1.0), beta0, beta1, sigma, &Rule::new(nodes))
}

/// Cholesky solve of a symmetric positive-definite 3x3 system; `None` if not SPD.
fn spd_solve(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return None;
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    let mut y = [0.0; 3];
    for i in 0..3 {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 3];
    for i in (0..3).rev() {
        x[i] = (y[i] - (i + 1..3).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}

fn invert_spd(a: [[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let mut inv = [[0.0; 3]; 3];
    for c in 0..3 {
        let mut e = [0.0; 3];
        e[c] = 1.0;
        let col = spd_solve(a, e)?;
        for r in 0..3 {
            inv[r][c] = col[r];
        }
    }
    Some(inv)
}

/// Central-difference gradient and Hessian of `f` at `p`.
fn derivatives(f: &dyn Fn([f64; 3]) -> f64, p: [f64; 3], f0: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let h = 1e-4;
    let at = |d: [f64; 3]| f([p[0] + d[0], p[1] + d[1], p[2] + d[2]]);
    let unit = |i: usize, s: f64| {
        let mut d = [0.0; 3];
        d[i] = s;
        d
    };
    let mut g = [0.0; 3];
    let mut hess = [[0.0; 3]; 3];
    let mut plus = [0.0; 3];
    let mut minus = [0.0; 3];
    for i in 0..3 {
        plus[i] = at(unit(i, h));
        minus[i] = at(unit(i, -h));
        g[i] = (plus[i] - minus[i]) / (2.0 * h);
        hess[i][i] = (plus[i] - 2.0 * f0 + minus[i]) / (h * h);
    }
    for i in 0..3 {
        for j in i + 1..3 {
            let mut d = [0.0; 3];
            let mut corner = |si: f64, sj: f64| {
                d[i] = si * h;
                d[j] = sj * h;
                at(d)
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h);
            hess[i][j] = v;
            hess[j][i] = v;
        }
    }
    (g, hess)
}

/// Maximum-likelihood random-intercept probit fit.
///
/// Stimulus values are standardized internally; reported coefficients are on
/// the original scale. With fewer than two subjects this reduces to
/// [`fit_probit`] with `sigma_subject = 0`.
pub fn fit_probit_random_intercept(data: &FitDataset, nodes: usize) -> Result<RandomInterceptFit, FitError> {
    if nodes < 2 {
        return Err(FitError::InvalidArgument(format!("need at least 2 quadrature nodes, got {nodes}")));
    }
    let by_subject = data.by_subject();
    if by_subject.len() < 2 {
        let fit = fit_probit(data)?;
        return Ok(RandomInterceptFit { fit, sigma_subject: 0.0, n_subjects: by_subject.len(), nodes });
    }
    if data.len() < MIN_TRIALS {
        return Err(FitError::TooFewTrials(data.len()));
    }
    let n = data.len() as f64;
    let center = data.trials.iter().map(|t| t.x).sum::<f64>() / n;
    let scale = (data.trials.iter().map(|t| (t.x - center).powi(2)).sum::<f64>() / n).sqrt();
    if !(scale > 0.0) {
        return Err(FitError::DegenerateX);
    }
    let subjects = subject_groups(data, center, scale);
    let pooled = group_trials(data.trials.iter().map(|t| ((t.x - center) / scale, t.y)));
    let start = fit_groups(&pooled, data.len())?;
    let rule = Rule::new(nodes);
    let f = |p: [f64; 3]| total_ll(&subjects, p[0], p[1], p[2].clamp(TAU_MIN, TAU_MAX).exp(), &rule);

    let mut p = [start.beta0, start.beta1, 0.3f64.ln()];
    let mut ll = f(p);
    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        let (g, h) = derivatives(&f, p, ll);
        let neg_h = |mu: f64| {
            let mut a = [[0.0; 3]; 3];
            for i in 0..3 {
                for j in 0..3 {
                    a[i][j] = -h[i][j] + if i == j { mu } else { 0.0 };
                }
            }
            a
        };
        let mut mu = 0.0;
        let step = loop {
            if let Some(s) = spd_solve(neg_h(mu), g) {
                break s;
            }
            mu = if mu == 0.0 { 1e-6 } else { mu * 10.0 };
            if mu > 1e8 {
                break [0.0; 3];
            }
        };
        let mut t = 1.0;
        let mut next;
        let mut nll;
        loop {
            next = [p[0] + t * step[0], p[1] + t * step[1], (p[2] + t * step[2]).clamp(TAU_MIN, TAU_MAX)];
            nll = f(next);
            if nll >= ll || t < 1e-10 {
                break;
            }
            t *= 0.5;
        }
        if !(nll >= ll) {
            converged = true;
            break;
        }
        let improvement = nll - ll;
        p = next;
        ll = nll;
        if improvement < LL_TOL {
            converged = true;
            break;
        }
    }

    let sigma = p[2].clamp(TAU_MIN, TAU_MAX).exp();
    let (b0, b1) = (p[0], p[1]);
    let beta1 = b1 / scale;
    let beta0 = b0 - b1 * center / scale;
    let (_, h) = derivatives(&f, p, ll);
    let neg: [[f64; 3]; 3] = std::array::from_fn(|i| std::array::from_fn(|j| -h[i][j]));
    let (se_beta0, se_beta1) = match invert_spd(neg) {
        Some(cov) => {
            let r = center / scale;
            let v1 = cov[1][1] / (scale * scale);
            let v0 = cov[0][0] + r * r * cov[1][1] - 2.0 * r * cov[0][1];
            (v0.max(0.0).sqrt(), v1.max(0.0).sqrt())
        }
        None => (f64::NAN, f64::NAN),
    };
    let fit = PsychometricFit {
        beta0,
        beta1,
        jnd_um: super::jnd(beta1).ok(),
        pse_um: super::pse(beta0, beta1).ok(),
        ci_jnd: None,
        ci_pse: None,
        se_beta0,
        se_beta1,
        log_likelihood: ll,
        converged,
        iterations,
        n_trials: data.len(),
        diagnostic: (!converged).then(|| format!("no convergence after {MAX_ITER} iterations")),
    };
    Ok(RandomInterceptFit { fit, sigma_subject: sigma, n_subjects: subjects.len(), nodes })
}
