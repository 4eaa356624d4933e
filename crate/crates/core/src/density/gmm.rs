//! One-dimensional Gaussian mixtures with closed-form corrupted densities.
//!
//! Adding `N(0, sigma^2)` noise to a mixture gives the same mixture with each
//! component variance widened to `s_i^2 + sigma^2`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture1D {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl GaussianMixture1D {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        if n == 0 || means.len() != n || stds.len() != n {
            return Err(Error::shape("mixture lists must be non-empty and equal length"));
        }
        if weights.iter().any(|w| !(*w > 0.0)) || stds.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::contract("mixture weights and stds must be positive"));
        }
        if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::contract("mixture weights must sum to 1"));
        }
        Ok(Self {
            weights,
            means,
            stds,
        })
    }

    /// Two equal-weight components at -2 and 2 with std 0.5.
    pub fn symmetric_pair() -> Self {
        Self::new(vec![0.5, 0.5], vec![-2.0, 2.0], vec![0.5, 0.5]).expect("valid mixture")
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut k = self.weights.len() - 1;
                for (i, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        k = i;
                        break;
                    }
                }
                let z: f64 = rng.sample(StandardNormal);
                self.means[k] + self.stds[k] * z
            })
            .collect()
    }

    fn variances(&self, sigma: f64) -> impl Iterator<Item = f64> + '_ {
        self.stds.iter().map(move |s| s * s + sigma * sigma)
    }

    /// CDF of the corrupted mixture.
    pub fn cdf(&self, sigma: f64, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(self.variances(sigma))
            .map(|((w, m), v)| w * 0.5 * libm::erfc(-(y - m) / (2.0 * v).sqrt()))
            .sum()
    }

    /// Central interval holding `mass` of the corrupted mixture.
    pub fn mass_interval(&self, sigma: f64, mass: f64) -> (f64, f64) {
        let tail = 0.5 * (1.0 - mass);
        (
            self.quantile(sigma, tail),
            self.quantile(sigma, 1.0 - tail),
        )
    }

    fn quantile(&self, sigma: f64, p: f64) -> f64 {
        let spread = self
            .variances(sigma)
            .fold(0.0f64, |a, v| a.max(v.sqrt()));
        let lo_mean = self.means.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi_mean = self.means.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let (mut lo, mut hi) = (lo_mean - 40.0 * spread, hi_mean + 40.0 * spread);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(sigma, mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Exact `-log p(y)` and `d log p(y) / dy` of the mixture corrupted by
/// Gaussian noise of scale `sigma`.
pub fn gmm_oracle(mix: &GaussianMixture1D, sigma: f64, y: f64) -> (f64, f64) {
    let logs: Vec<f64> = mix
        .weights
        .iter()
        .zip(&mix.means)
        .zip(mix.variances(sigma))
        .map(|((w, m), v)| w.ln() - 0.5 * (2.0 * PI * v).ln() - (y - m) * (y - m) / (2.0 * v))
        .collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let resp: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = resp.iter().sum();
    let log_p = top + total.ln();
    let score = resp
        .iter()
        .zip(&mix.means)
        .zip(mix.variances(sigma))
        .map(|((r, m), v)| r / total * (-(y - m) / v))
        .sum();
    (-log_p, score)
}
