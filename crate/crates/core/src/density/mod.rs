//! Density estimation on transition vectors.
//!
//! [`deen`] learns an energy network whose input gradient satisfies the
//! empirical Bayes denoising relation; [`dae`] is the denoising-autoencoder
//! baseline. Both are trained on z-scored vectors corrupted with isotropic
//! Gaussian noise whose scale is expressed in normalized units.

pub mod dae;
pub mod deen;
pub mod gmm;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::nn::{Activation, NetworkParams, TapedNetwork};
use crate::normalize::Normalizer;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub use dae::{dae_loss, dae_penalty, train_dae, DenoiserModel};
pub use deen::{deen_loss, energy, score, train_deen, EnergyModel};
pub use gmm::{gmm_oracle, GaussianMixture1D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Noise scale in normalized units.
    pub sigma: f64,
    pub seed: u64,
}

/// `x + sigma * z` with `z` standard normal per element.
pub fn corrupt<R: Rng + ?Sized>(x: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    if !(sigma >= 0.0) {
        return Err(Error::contract(format!("noise scale must be >= 0, got {sigma}")));
    }
    x.ensure_finite("clean sample")?;
    let mut y = x.clone();
    for v in y.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += sigma * z;
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityTrainConfig {
    pub noise: NoiseConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub holdout_fraction: f64,
}

impl Default for DensityTrainConfig {
    fn default() -> Self {
        Self {
            noise: NoiseConfig {
                sigma: 0.5,
                seed: 0,
            },
            epochs: 100,
            batch_size: 32,
            lr: 1e-3,
            hidden_layers: 2,
            hidden_size: 64,
            holdout_fraction: 0.1,
        }
    }
}

/// Per-epoch losses of one training run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    /// Loss on a holdout split under one fixed corruption draw.
    pub val_loss: Vec<f64>,
    /// Input dimensions with zero variance (normalized with std 1).
    pub degenerate_dims: Vec<usize>,
}

impl TrainReport {
    pub fn warning(&self) -> bool {
        !self.degenerate_dims.is_empty()
    }

    pub fn final_train_loss(&self) -> f64 {
        self.train_loss.last().copied().unwrap_or(f64::NAN)
    }
}

/// A denoising objective on normalized `(clean, corrupted)` batches.
pub(crate) trait DenoisingObjective {
    fn taped(&self, net: &TapedNetwork, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Result<Var>;
    fn value(&self, params: &NetworkParams, x: &Tensor, y: &Tensor) -> Result<f64>;
}

pub(crate) struct Fitted {
    pub params: NetworkParams,
    pub normalizer: Normalizer,
    pub report: TrainReport,
}

fn rows_tensor(rows: &[&[f64]], dim: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows.len() * dim);
    for r in rows {
        data.extend_from_slice(r);
    }
    Tensor::matrix(rows.len(), dim, data).expect("non-empty batch")
}

pub(crate) fn fit_denoiser(
    vectors: &[Vec<f64>],
    cfg: &DensityTrainConfig,
    output_dim: Option<usize>,
    init: Option<&NetworkParams>,
    objective: &dyn DenoisingObjective,
) -> Result<Fitted> {
    if vectors.len() < 2 {
        return Err(Error::contract("density training needs at least 2 vectors"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config("epochs and batch_size must be >= 1"));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::config("holdout_fraction must be in [0, 1)"));
    }
    let dim = vectors[0].len();
    let normalizer = Normalizer::fit(vectors.iter().map(Vec::as_slice), dim)?;
    if normalizer.is_degenerate() {
        log::warn!(
            "zero-variance dimensions {:?} normalized with std 1",
            normalizer.degenerate
        );
    }
    let data: Vec<Vec<f64>> = vectors.iter().map(|v| normalizer.normalize(v)).collect();
    let out = output_dim.unwrap_or(dim);
    let sigma = cfg.noise.sigma;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng);
    let holdout = ((data.len() as f64 * cfg.holdout_fraction).round() as usize).min(data.len() - 1);
    let (val_idx, train_idx) = order.split_at(holdout);
    let mut train_idx = train_idx.to_vec();
    let val_rows: Vec<&[f64]> = if val_idx.is_empty() {
        train_idx.iter().map(|&i| data[i].as_slice()).collect()
    } else {
        val_idx.iter().map(|&i| data[i].as_slice()).collect()
    };
    let val_x = rows_tensor(&val_rows, dim);
    let val_y = corrupt(&val_x, sigma, &mut rng)?;

    let mut params = match init {
        Some(p) => {
            if p.input_dim() != dim || p.output_dim() != out {
                return Err(Error::shape("warm-start network has the wrong widths"));
            }
            p.clone()
        }
        None => {
            let mut sizes = vec![dim];
            sizes.extend(std::iter::repeat_n(cfg.hidden_size, cfg.hidden_layers));
            sizes.push(out);
            NetworkParams::init(&sizes, Activation::Softplus, &mut rng)
        }
    };
    let mut adam = AdamState::for_network(&params, AdamConfig::with_lr(cfg.lr))?;
    let mut report = TrainReport {
        degenerate_dims: normalizer.degenerate.clone(),
        ..TrainReport::default()
    };

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let rows: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let x = rows_tensor(&rows, dim);
            let y = corrupt(&x, sigma, &mut rng)?;
            let mut tape = Tape::new();
            let net = params.on_tape(&mut tape);
            let loss = objective.taped(&net, &mut tape, &x, &y)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::non_finite(format!("training loss at epoch {epoch}")));
            }
            let grads = net.param_gradients(&mut tape, loss)?;
            adam_step(&mut params, &grads, &mut adam)?;
            total += value * chunk.len() as f64;
        }
        report.train_loss.push(total / train_idx.len() as f64);
        report.val_loss.push(objective.value(&params, &val_x, &val_y)?);
    }
    Ok(Fitted {
        params,
        normalizer,
        report,
    })
}

pub(crate) fn check_width(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::shape(format!(
            "model expects vectors of width {expected}, got {got}"
        )));
    }
    Ok(())
}
