//! Two-component 1-D Gaussian mixture fitted by EM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub variance_floor: f64,
    /// Stop once the total log-likelihood improves by less than this.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub max_restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            variance_floor: 1e-6,
            tolerance: 1e-8,
            max_iterations: 200,
            max_restarts: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1d {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub mixture: GaussianMixture1d,
    /// Total log-likelihood after initialization and after every EM step.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub restarts: usize,
}

fn log_normal(x: f64, mean: f64, variance: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * variance).ln() + (x - mean).powi(2) / variance)
}

fn log_sum_exp(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

impl GaussianMixture1d {
    fn joint_log(&self, x: f64) -> [f64; 2] {
        [0, 1].map(|k| self.weights[k].ln() + log_normal(x, self.means[k], self.variances[k]))
    }

    /// Component responsibilities for `x`.
    pub fn posterior(&self, x: f64) -> [f64; 2] {
        let [a, b] = self.joint_log(x);
        let norm = log_sum_exp(a, b);
        [(a - norm).exp(), (b - norm).exp()]
    }

    pub fn log_likelihood(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| {
                let [a, b] = self.joint_log(x);
                log_sum_exp(a, b)
            })
            .sum()
    }

    /// Index of the component with the smaller mean.
    pub fn low_component(&self) -> usize {
        if self.means[0] <= self.means[1] {
            0
        } else {
            1
        }
    }
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Means at the given centers, then one nearest-center assignment for the
/// weights and variances.
fn init_from_centers(values: &[f64], centers: [f64; 2], floor: f64) -> GaussianMixture1d {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    let assign = |x: f64| usize::from((x - centers[1]).abs() < (x - centers[0]).abs());
    for &x in values {
        let k = assign(x);
        sums[k] += x;
        counts[k] += 1;
    }
    let n = values.len() as f64;
    let pooled_mean = values.iter().sum::<f64>() / n;
    let pooled_var = values.iter().map(|x| (x - pooled_mean).powi(2)).sum::<f64>() / n;
    let mut sq = [0.0; 2];
    for &x in values {
        let k = assign(x);
        sq[k] += (x - centers[k]).powi(2);
    }
    let mut m = GaussianMixture1d {
        weights: [0.5, 0.5],
        means: centers,
        variances: [pooled_var.max(floor); 2],
    };
    if counts[0] > 0 && counts[1] > 0 {
        for k in 0..2 {
            m.weights[k] = counts[k] as f64 / n;
            m.variances[k] = (sq[k] / counts[k] as f64).max(floor);
        }
    }
    m
}

/// Runs EM from `init`; `Err` describes a collapse.
fn run_em(
    values: &[f64],
    mut m: GaussianMixture1d,
    cfg: &EmConfig,
) -> std::result::Result<(GaussianMixture1d, Vec<f64>, usize), String> {
    let n = values.len() as f64;
    let mut trace = vec![m.log_likelihood(values)];
    let mut resp = vec![[0.0; 2]; values.len()];
    let mut iterations = 0;
    for _ in 0..cfg.max_iterations {
        for (r, &x) in resp.iter_mut().zip(values) {
            *r = m.posterior(x);
        }
        for k in 0..2 {
            let mass: f64 = resp.iter().map(|r| r[k]).sum();
            if mass.is_nan() || mass / n < 1e-6 {
                return Err(format!("component {k} lost its mass"));
            }
            let mean = resp.iter().zip(values).map(|(r, x)| r[k] * x).sum::<f64>() / mass;
            let raw_var = resp
                .iter()
                .zip(values)
                .map(|(r, x)| r[k] * (x - mean).powi(2))
                .sum::<f64>()
                / mass;
            if raw_var.is_nan() || raw_var <= 1e-20 {
                return Err(format!("component {k} variance collapsed"));
            }
            m.weights[k] = mass / n;
            m.means[k] = mean;
            m.variances[k] = raw_var.max(cfg.variance_floor);
        }
        if (m.means[0] - m.means[1]).abs() < 1e-9 && (m.variances[0] - m.variances[1]).abs() < 1e-12 {
            return Err("components coincide".into());
        }
        let ll = m.log_likelihood(values);
        if !ll.is_finite() {
            return Err("non-finite log-likelihood".into());
        }
        iterations += 1;
        let improvement = ll - trace.last().copied().unwrap_or(f64::NEG_INFINITY);
        trace.push(ll);
        if improvement < cfg.tolerance {
            break;
        }
    }
    Ok((m, trace, iterations))
}

/// Fits the mixture, restarting with jittered initial means when EM collapses.
pub fn fit_two_component(values: &[f64], cfg: &EmConfig) -> Result<GmmFit> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument("need at least two values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("values must be finite".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let base = [percentile(&sorted, 0.25), percentile(&sorted, 0.75)];
    let spread = (sorted[sorted.len() - 1] - sorted[0]).max(1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6a17);
    let mut last_reason = String::new();
    for attempt in 0..=cfg.max_restarts {
        let centers = if attempt == 0 {
            base
        } else {
            base.map(|c| c + spread * rng.random_range(-0.25..0.25))
        };
        let init = init_from_centers(values, centers, cfg.variance_floor);
        match run_em(values, init, cfg) {
            Ok((mixture, log_likelihood_trace, iterations)) => {
                return Ok(GmmFit {
                    mixture,
                    log_likelihood_trace,
                    iterations,
                    restarts: attempt,
                })
            }
            Err(reason) => last_reason = reason,
        }
    }
    Err(Error::DegenerateFit(format!(
        "{last_reason} after {} restarts",
        cfg.max_restarts
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn two_gaussians(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = Normal::new(0.1, 0.05).unwrap();
        let b = Normal::new(0.8, 0.1).unwrap();
        (0..n)
            .map(|i| {
                if i % 2 == 0 {
                    a.sample(&mut rng)
                } else {
                    b.sample(&mut rng)
                }
            })
            .collect()
    }

    #[test]
    fn recovers_generating_means() {
        let values = two_gaussians(5000, 1);
        let fit = fit_two_component(&values, &EmConfig::default()).unwrap();
        let low = fit.mixture.low_component();
        assert!((fit.mixture.means[low] - 0.1).abs() < 0.05);
        assert!((fit.mixture.means[1 - low] - 0.8).abs() < 0.05);
        assert!((fit.mixture.weights[low] - 0.5).abs() < 0.05);
    }

    #[test]
    fn log_likelihood_is_monotone() {
        let values = two_gaussians(2000, 2);
        let fit = fit_two_component(&values, &EmConfig::default()).unwrap();
        for w in fit.log_likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn identical_values_are_degenerate() {
        let values = vec![0.3; 50];
        assert!(matches!(
            fit_two_component(&values, &EmConfig::default()),
            Err(Error::DegenerateFit(_))
        ));
    }

    #[test]
    fn posterior_sums_to_one() {
        let m = GaussianMixture1d {
            weights: [0.3, 0.7],
            means: [0.0, 1.0],
            variances: [0.1, 0.2],
        };
        for x in [-1.0, 0.0, 0.4, 2.0, 50.0] {
            let p = m.posterior(x);
            assert!((p[0] + p[1] - 1.0).abs() < 1e-12);
        }
        assert!(m.posterior(-1.0)[0] > 0.9);
    }
}
