//! Deep energy estimator networks.
//!
//! The network `E(y)` is trained so that `y - sigma^2 dE/dy` denoises `y`,
//! i.e. by minimizing the batch mean of `|x - y + sigma^2 dE/dy|^2`. Its
//! negative input gradient is then the score of the noise-smoothed density.

use serde::{Deserialize, Serialize};

use super::{check_width, fit_denoiser, DenoisingObjective, DensityTrainConfig, TrainReport};
use crate::error::{Error, Result};
use crate::nn::{NetworkParams, TapedNetwork};
use crate::normalize::Normalizer;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub params: NetworkParams,
    pub normalizer: Normalizer,
    /// Noise scale used in training, in normalized units.
    pub sigma: f64,
}

impl EnergyModel {
    pub fn new(params: NetworkParams, normalizer: Normalizer, sigma: f64) -> Result<Self> {
        normalizer.validate()?;
        if params.output_dim() != 1 {
            return Err(Error::contract("energy network must have a scalar output"));
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

    pub fn energy(&self, v: &[f64]) -> Result<f64> {
        check_width(self.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("energy input"));
        }
        let z = Tensor::vector(self.normalizer.normalize(v));
        Ok(self.params.forward(&z)?.data()[0])
    }

    /// Energies of a flat buffer of rows. Non-finite inputs yield non-finite
    /// energies rather than errors.
    pub fn energy_rows(&self, rows: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut z = rows.to_vec();
        self.normalizer.normalize_rows(&mut z);
        self.params.forward_rows(&z, rows.len() / d)
    }

    /// `d log p / dv = -dE/dv` in raw coordinates.
    pub fn score(&self, v: &[f64]) -> Result<Vec<f64>> {
        check_width(self.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::non_finite("score input"));
        }
        let z = Tensor::vector(self.normalizer.normalize(v));
        let g = self.params.input_gradient(&z)?;
        Ok(g.data()
            .iter()
            .zip(&self.normalizer.std)
            .map(|(gz, s)| -gz / s)
            .collect())
    }

    /// Raw-space gradient `dE/dv` for a flat buffer of rows.
    pub fn energy_gradient_rows(&self, rows: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut z = rows.to_vec();
        self.normalizer.normalize_rows(&mut z);
        let g = self
            .params
            .input_gradient(&Tensor::matrix(rows.len() / d, d, z)?)?;
        let mut out = g.into_data();
        for row in out.chunks_mut(d) {
            for (x, s) in row.iter_mut().zip(&self.normalizer.std) {
                *x /= s;
            }
        }
        Ok(out)
    }
}

pub fn energy(model: &EnergyModel, v: &[f64]) -> Result<f64> {
    model.energy(v)
}

pub fn score(model: &EnergyModel, v: &[f64]) -> Result<Vec<f64>> {
    model.score(v)
}

fn check_pairs(x: &Tensor, y: &Tensor, sigma: f64) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::shape("clean and corrupted batches differ in shape"));
    }
    if !(sigma > 0.0) {
        return Err(Error::contract("DEEN needs a positive noise scale"));
    }
    Ok(())
}

/// Batch mean of `|x_i - y_i + sigma^2 dE(y_i)/dy|^2`; rows are pairs.
pub fn deen_loss(params: &NetworkParams, x: &Tensor, y: &Tensor, sigma: f64) -> Result<f64> {
    check_pairs(x, y, sigma)?;
    let g = params.input_gradient(y)?;
    let s2 = sigma * sigma;
    let mut total = 0.0;
    for ((xv, yv), gv) in x.data().iter().zip(y.data()).zip(g.data()) {
        let r = xv - yv + s2 * gv;
        total += r * r;
    }
    Ok(total / x.rows() as f64)
}

/// Taped form of [`deen_loss`], differentiable in the parameters through
/// the input gradient.
pub fn deen_loss_on_tape(
    net: &TapedNetwork,
    tape: &mut Tape,
    x: &Tensor,
    y: &Tensor,
    sigma: f64,
) -> Result<Var> {
    check_pairs(x, y, sigma)?;
    let rows = x.rows();
    let diff = x.as_matrix().zip_map(&y.as_matrix(), |a, b| a - b)?;
    let diff = tape.leaf(diff);
    let yv = tape.leaf(y.clone());
    let g = net.input_gradient(tape, yv)?;
    let g = tape.scale(g, sigma * sigma);
    let r = tape.add(diff, g)?;
    let sq = tape.square(r);
    let total = tape.sum(sq);
    Ok(tape.scale(total, 1.0 / rows as f64))
}

struct DeenObjective {
    sigma: f64,
}

impl DenoisingObjective for DeenObjective {
    fn taped(&self, net: &TapedNetwork, tape: &mut Tape, x: &Tensor, y: &Tensor) -> Result<Var> {
        deen_loss_on_tape(net, tape, x, y, self.sigma)
    }

    fn value(&self, params: &NetworkParams, x: &Tensor, y: &Tensor) -> Result<f64> {
        deen_loss(params, x, y, self.sigma)
    }
}

/// Fit a DEEN on `vectors`, optionally continuing from `init` weights.
pub fn train_deen(
    vectors: &[Vec<f64>],
    cfg: &DensityTrainConfig,
    init: Option<&NetworkParams>,
) -> Result<(EnergyModel, TrainReport)> {
    if !(cfg.noise.sigma > 0.0) {
        return Err(Error::config("DEEN needs a positive noise scale"));
    }
    let fitted = fit_denoiser(
        vectors,
        cfg,
        Some(1),
        init,
        &DeenObjective {
            sigma: cfg.noise.sigma,
        },
    )?;
    let model = EnergyModel::new(fitted.params, fitted.normalizer, cfg.noise.sigma)?;
    Ok((model, fitted.report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Layer};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_net(dim: usize, b: f64) -> NetworkParams {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = NetworkParams::init(&[dim, 4, 1], Activation::Softplus, &mut rng);
        for l in p.layers_mut() {
            l.weight.data_mut().iter_mut().for_each(|w| *w = 0.0);
        }
        p.layers_mut()[1].bias = Tensor::vector(vec![b]);
        p
    }

    #[test]
    fn zero_gradient_network_reduces_to_mean_squared_difference() {
        let p = constant_net(2, 1.3);
        let x = Tensor::matrix(2, 2, vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        let y = Tensor::matrix(2, 2, vec![0.0, 0.0, 3.0, -4.0]).unwrap();
        let l = deen_loss(&p, &x, &y, 0.5).unwrap();
        assert!((l - (5.0 + 25.0) / 2.0).abs() < 1e-12);
        let same = deen_loss(&p, &x, &x, 0.5).unwrap();
        assert_eq!(same, 0.0);
    }

    #[test]
    fn linear_energy_closed_form() {
        let w = vec![0.4, -1.5];
        let p = NetworkParams::new(vec![Layer {
            weight: Tensor::matrix(1, 2, w.clone()).unwrap(),
            bias: Tensor::vector(vec![0.2]),
            activation: Activation::Identity,
        }])
        .unwrap();
        let (xv, yv, sigma) = ([1.0, -2.0], [0.5, 0.25], 0.3);
        let x = Tensor::matrix(1, 2, xv.to_vec()).unwrap();
        let y = Tensor::matrix(1, 2, yv.to_vec()).unwrap();
        let want: f64 = (0..2)
            .map(|i| (xv[i] - yv[i] + sigma * sigma * w[i]).powi(2))
            .sum();
        assert!((deen_loss(&p, &x, &y, sigma).unwrap() - want).abs() < 1e-14);

        let mut tape = Tape::new();
        let net = p.on_tape(&mut tape);
        let l = deen_loss_on_tape(&net, &mut tape, &x, &y, sigma).unwrap();
        assert!((tape.value(l).data()[0] - want).abs() < 1e-14);
    }

    #[test]
    fn loss_vanishes_as_sigma_shrinks_on_clean_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let p = NetworkParams::init(&[3, 8, 1], Activation::Softplus, &mut rng);
        let x = Tensor::matrix(2, 3, vec![0.1, 0.2, -0.3, 1.0, 0.5, -1.0]).unwrap();
        let l1 = deen_loss(&p, &x, &x, 1e-2).unwrap();
        let l2 = deen_loss(&p, &x, &x, 1e-4).unwrap();
        assert!(l2 < l1 && l2 < 1e-14);
    }

    #[test]
    fn rejects_bad_batches() {
        let p = constant_net(2, 0.0);
        let x = Tensor::matrix(1, 2, vec![0.0, 0.0]).unwrap();
        let y = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
        assert!(deen_loss(&p, &x, &y, 0.5).is_err());
        assert!(deen_loss(&p, &x, &x, 0.0).is_err());
        assert!(train_deen(&[vec![1.0, 2.0]], &DensityTrainConfig::default(), None).is_err());
    }

    #[test]
    fn constant_network_energy_and_score() {
        let model = EnergyModel::new(constant_net(2, 1.75), Normalizer::identity(2), 0.5).unwrap();
        for v in [[0.0, 0.0], [3.0, -8.0]] {
            assert_eq!(model.energy(&v).unwrap(), 1.75);
            assert_eq!(model.score(&v).unwrap(), vec![0.0, 0.0]);
        }
        assert!(model.energy(&[1.0]).is_err());
        assert!(model.energy(&[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn bias_offset_shifts_energy_and_keeps_score() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = NetworkParams::init(&[2, 8, 8, 1], Activation::Softplus, &mut rng);
        let norm = Normalizer {
            mean: vec![0.5, -1.0],
            std: vec![2.0, 0.5],
            degenerate: vec![],
        };
        let a = EnergyModel::new(params.clone(), norm.clone(), 0.3).unwrap();
        let mut shifted = params;
        let last = shifted.layers_mut().last_mut().unwrap();
        last.bias.data_mut()[0] += 4.0;
        let b = EnergyModel::new(shifted, norm, 0.3).unwrap();
        for v in [[0.0, 0.0], [1.5, -2.0], [-3.0, 0.7]] {
            assert!((b.energy(&v).unwrap() - a.energy(&v).unwrap() - 4.0).abs() < 1e-12);
            assert_eq!(a.score(&v).unwrap(), b.score(&v).unwrap());
        }
    }

    #[test]
    fn constant_data_sets_warning_and_trains() {
        let vectors = vec![vec![1.0, 2.0]; 20];
        let cfg = DensityTrainConfig {
            epochs: 2,
            hidden_size: 8,
            ..DensityTrainConfig::default()
        };
        let (model, report) = train_deen(&vectors, &cfg, None).unwrap();
        assert!(report.warning());
        assert_eq!(report.degenerate_dims, vec![0, 1]);
        assert!(model.energy(&[1.0, 2.0]).unwrap().is_finite());
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vectors: Vec<Vec<f64>> = (0..64)
            .map(|_| {
                use rand::Rng;
                vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]
            })
            .collect();
        let cfg = DensityTrainConfig {
            epochs: 3,
            hidden_size: 8,
            ..DensityTrainConfig::default()
        };
        let (a, ra) = train_deen(&vectors, &cfg, None).unwrap();
        let (b, rb) = train_deen(&vectors, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }
}
