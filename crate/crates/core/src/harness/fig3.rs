use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::density::{gmm_oracle, train_dae, train_deen, DensityTrainConfig, GaussianMixture1D, NoiseConfig};
use crate::error::{Error, Result};
use crate::normalize::Normalizer;

/// Training and grid settings for the 1-D density comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Fig3Settings {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub holdout_fraction: f64,
    pub grid_points: usize,
    /// Probability mass of the corrupted mixture covered by the grid.
    pub grid_mass: f64,
}

impl Default for Fig3Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            epochs: 800,
            batch_size: 32,
            lr: 3e-3,
            hidden_layers: 2,
            hidden_size: 64,
            holdout_fraction: 0.1,
            grid_points: 241,
            grid_mass: 0.99,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Point {
    pub y: f64,
    pub analytic_energy: f64,
    pub analytic_score: f64,
    pub deen_energy: f64,
    pub deen_score: f64,
    pub dae_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fig3Report {
    pub sigma: f64,
    pub n_samples: usize,
    pub interval: (f64, f64),
    /// Energy RMSE after removing the mean offset over the grid.
    pub energy_rmse: f64,
    pub energy_offset: f64,
    pub deen_score_rmse: f64,
    pub dae_score_rmse: f64,
    pub grid: Vec<Fig3Point>,
}

fn rmse(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), e| (s + e * e, n + 1));
    (s / n.max(1) as f64).sqrt()
}

/// Fit a DEEN and a DAE on `n_samples` draws of `mix` corrupted at raw scale
/// `sigma`, and compare both against the closed-form corrupted mixture on a
/// grid over its central mass interval. Writes the grid as CSV when
/// `out_path` is given.
pub fn fig3_experiment(
    mix: &GaussianMixture1D,
    n_samples: usize,
    sigma: f64,
    settings: &Fig3Settings,
    out_path: Option<&Path>,
) -> Result<Fig3Report> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!("noise scale must be positive, got {sigma}")));
    }
    if n_samples < 2 || settings.grid_points < 2 {
        return Err(Error::config("need at least 2 samples and 2 grid points"));
    }
    if !(settings.grid_mass > 0.0 && settings.grid_mass < 1.0) {
        return Err(Error::config("grid_mass must be in (0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, "fig3-samples", 0));
    let xs: Vec<Vec<f64>> = mix.sample(n_samples, &mut rng).into_iter().map(|x| vec![x]).collect();
    let norm = Normalizer::fit(xs.iter().map(Vec::as_slice), 1)?;
    // Training corrupts in normalized space.
    let cfg = |tag: &str| DensityTrainConfig {
        noise: NoiseConfig {
            sigma: sigma / norm.std[0],
            seed: derive_seed(settings.seed, tag, 0),
        },
        epochs: settings.epochs,
        batch_size: settings.batch_size,
        lr: settings.lr,
        hidden_layers: settings.hidden_layers,
        hidden_size: settings.hidden_size,
        holdout_fraction: settings.holdout_fraction,
    };
    let (deen, _) = train_deen(&xs, &cfg("fig3-deen"), None)?;
    let (dae, _) = train_dae(&xs, &cfg("fig3-dae"), None)?;

    let (lo, hi) = mix.mass_interval(sigma, settings.grid_mass);
    let n = settings.grid_points;
    let mut grid = Vec::with_capacity(n);
    for i in 0..n {
        let y = lo + (hi - lo) * i as f64 / (n - 1) as f64;
        let (analytic_energy, analytic_score) = gmm_oracle(mix, sigma, y);
        grid.push(Fig3Point {
            y,
            analytic_energy,
            analytic_score,
            deen_energy: deen.energy(&[y])?,
            deen_score: deen.score(&[y])?[0],
            dae_score: dae.score(&[y])?[0],
        });
    }
    let energy_offset = grid.iter().map(|p| p.deen_energy - p.analytic_energy).sum::<f64>() / n as f64;
    let report = Fig3Report {
        sigma,
        n_samples,
        interval: (lo, hi),
        energy_rmse: rmse(grid.iter().map(|p| p.deen_energy - p.analytic_energy - energy_offset)),
        energy_offset,
        deen_score_rmse: rmse(grid.iter().map(|p| p.deen_score - p.analytic_score)),
        dae_score_rmse: rmse(grid.iter().map(|p| p.dae_score - p.analytic_score)),
        grid,
    };
    if let Some(path) = out_path {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
        for p in &report.grid {
            w.serialize(p).map_err(|e| Error::Format(e.to_string()))?;
        }
        w.flush()?;
    }
    Ok(report)
}
