//! Denoising autoencoder baseline. The residual `g(y) - y` of an optimal
//! denoiser is `sigma^2` times the score of the corrupted density.

use serde::{Deserialize, Serialize};

use super::{check_width, fit_denoiser, DenoisingObjective, DensityTrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{NetworkParams, TapedNetwork};
use crate::normalize::Normalizer;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenoiserModel {
    pub params: NetworkParams,
    pub normalizer: Normalizer,
    pub sigma: f64,
}

impl DenoiserModel {
    pub fn new(params: NetworkParams, normalizer: Normalizer, sigma: f64) -> Result<Self> {
        normalizer.validate()?;
        if params.input_dim() != params.output_dim() {
            return Err(Error::shape("denoiser input and output widths differ"));
        }
        check_width(params.input_dim(), normalizer.dim())?;
        Ok(Self {
            params,
            normalizer,
            sigma,
        })
    }

    pub fn dim(&self) -> usize {
        self.normalizer.dim()
    }

    fn denoise_normalized(&self, v: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        check_width(self.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("denoiser input"));
        }
        let z = self.normalizer.normalize(v);
        let g = self.params.forward(&Tensor::vector(z.clone()))?.into_data();
        Ok((z, g))
    }

    /// Denoised vector in raw coordinates.
    pub fn denoise(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (_, g) = self.denoise_normalized(v)?;
        Ok(self.normalizer.denormalize(&g))
    }

    /// `|g(z) - z|^2` in normalized space.
    pub fn penalty(&self, v: &[f64]) -> Result<f64> {
        let (z, g) = self.denoise_normalized(v)?;
        Ok(z.iter().zip(&g).map(|(a, b)| (b - a) * (b - a)).sum())
    }

    /// Penalties of a flat buffer of rows; non-finite rows give non-finite
    /// penalties.
    pub fn penalty_rows(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z = rows.to_vec();
        self.normalizer.normalize_rows(&mut z);
        let g = self.params.forward_rows(&z, rows.len() / d);
        z.chunks(d)
            .zip(g.chunks(d))
            .map(|(zr, gr)| zr.iter().zip(gr).map(|(a, b)| (b - a) * (b - a)).sum())
            .collect()
    }

    /// Raw-space gradient of the penalty with the denoiser output held
    /// fixed: `2 (z - g(z)) / std`.
    pub fn penalty_gradient_rows(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z = rows.to_vec();
        self.normalizer.normalize_rows(&mut z);
        let g = self.params.forward_rows(&z, rows.len() / d);
        let mut out = Vec::with_capacity(rows.len());
        for (zr, gr) in z.chunks(d).zip(g.chunks(d)) {
            for ((a, b), s) in zr.iter().zip(gr).zip(&self.normalizer.std) {
                out.push(2.0 * (a - b) / s);
            }
        }
        out
    }

    /// Score estimate `(g(z) - z) / sigma^2`, mapped to raw coordinates.
    pub fn score(&self, v: &[f64]) -> Result<Vec<f64>> {
        let (z, g) = self.denoise_normalized(v)?;
        let s2 = self.sigma * self.sigma;
        Ok(z.iter()
            .zip(&g)
            .zip(&self.normalizer.std)
            .map(|((a, b), s)| (b - a) / s2 / s)
            .collect())
    }
}

pub fn dae_penalty(model: &DenoiserModel, v: &[f64]) -> Result<f64> {
    model.penalty(v)
}

/// Batch mean of `|g(y_i) - x_i|^2`.
pub fn dae_loss(params: &NetworkParams, x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.shape() != y.shape() {
        return Err(Error::shape("clean and corrupted batches differ in shape"));
    }
    let g = params.forward(y)?;
    let total: f64 = g
        .data()
        .iter()
        .zip(x.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(total / x.rows() as f64)
}

pub fn dae_loss_on_tape(net: &TapedNetwork, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Result<Var> {
    if x.shape() != y.shape() {
        return Err(Error::shape("clean and corrupted batches differ in shape"));
    }
    let xv = tape.leaf(x.clone());
    let yv = tape.leaf(y.clone());
    let g = net.forward(tape, yv)?;
    let r = tape.sub(g, xv)?;
    let sq = tape.square(r);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / x.rows() as f64))
}

struct DaeObjective;

impl DenoisingObjective for DaeObjective {
    fn taped(&self, net: &TapedNetwork, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Result<Var> {
        dae_loss_on_tape(net, tape, x, y)
    }

    fn value(&self, params: &NetworkParams, x: &Tensor, y: &Tensor) -> Result<f64> {
        dae_loss(params, x, y)
    }
}

pub fn train_dae(
    vectors: &[Vec<f64>],
    cfg: &DensityTrainConfig,
    init: Option<&NetworkParams>,
) -> Result<(DenoiserModel, TrainReport)> {
    if !(cfg.noise.sigma > 0.0) {
        return Err(Error::config("denoiser needs a positive noise scale"));
    }
    let fitted = fit_denoiser(vectors, cfg, None, init, &DaeObjective)?;
    let model = DenoiserModel::new(fitted.params, fitted.normalizer, cfg.noise.sigma)?;
    Ok((model, fitted.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};

    fn linear(dim: usize, diag: f64) -> NetworkParams {
        let mut w = vec![0.0; dim * dim];
        for i in 0..dim {
            w[i * dim + i] = diag;
        }
        NetworkParams::new(vec![Layer {
            weight: Tensor::matrix(dim, dim, w).unwrap(),
            bias: Tensor::vector(vec![0.0; dim]),
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn identity_network_on_clean_batch_has_zero_loss() {
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        assert_eq!(dae_loss(&linear(2, 1.0), &x, &x).unwrap(), 0.0);
    }

    #[test]
    fn zero_network_hand_computation() {
        let x = Tensor::matrix(1, 1, vec![1.0]).unwrap();
        let y = Tensor::matrix(1, 1, vec![3.0]).unwrap();
        assert_eq!(dae_loss(&linear(1, 0.0), &x, &y).unwrap(), 1.0);
    }

    #[test]
    fn penalty_of_identity_and_zero_denoisers() {
        let id = DenoiserModel::new(linear(2, 1.0), Normalizer::identity(2), 0.5).unwrap();
        assert_eq!(id.penalty(&[3.0, -1.0]).unwrap(), 0.0);
        let zero = DenoiserModel::new(linear(1, 0.0), Normalizer::identity(1), 0.5).unwrap();
        assert_eq!(dae_penalty(&zero, &[2.0]).unwrap(), 4.0);
        assert_eq!(zero.penalty_rows(&[2.0, -1.0]), vec![4.0, 1.0]);
        assert!(zero.penalty(&[1.0, 2.0]).is_err());
    }

    #[test]
    fn taped_loss_matches_value() {
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, -3.0, 0.5]).unwrap();
        let y = Tensor::matrix(2, 2, vec![0.0, 2.5, -2.0, 1.0]).unwrap();
        let p = linear(2, 0.7);
        let mut tape = Tape::new();
        let net = p.on_tape(&mut tape);
        let l = dae_loss_on_tape(&net, &mut tape, &x, &y).unwrap();
        assert!((tape.value(l).data()[0] - dae_loss(&p, &x, &y).unwrap()).abs() < 1e-14);
    }
}
