//! Learned one-step dynamics with mean and log-variance heads.
//!
//! The network maps normalized `(s, a)` to a normalized state delta and a
//! log-variance per state dimension. Only the mean is used for rollouts.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{adam_step, AdamConfig, AdamState};
use crate::error::{Error, Result};
use crate::nn::{Activation, NetworkParams, TapedNetwork};
use crate::normalize::Normalizer;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 4.0;

/// A one-step predictor usable by rollouts and planners.
pub trait Dynamics: Send + Sync {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;

    /// Next-state mean and per-dimension variance.
    fn predict(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)>;

    /// Next-state means for flat row buffers. Non-finite inputs propagate
    /// instead of erroring.
    fn predict_rows(&self, states: &[f64], actions: &[f64]) -> Vec<f64>;

    /// The learned model behind this predictor, if any.
    fn as_learned(&self) -> Option<&DynamicsModel> {
        None
    }

    fn check(&self, s: &[f64], a: &[f64]) -> Result<()> {
        if s.len() != self.state_dim() || a.len() != self.action_dim() {
            return Err(Error::shape(format!(
                "dynamics expects state {} and action {}, got {} and {}",
                self.state_dim(),
                self.action_dim(),
                s.len(),
                a.len()
            )));
        }
        if s.iter().chain(a).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("dynamics input"));
        }
        Ok(())
    }

    /// Iterated mean predictions, one successor per action.
    fn rollout(&self, s0: &[f64], actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        if actions.is_empty() {
            return Err(Error::contract("rollout needs at least one action"));
        }
        self.check(s0, &actions[0])?;
        let mut out = Vec::with_capacity(actions.len());
        let mut s = s0.to_vec();
        for (i, a) in actions.iter().enumerate() {
            if a.len() != self.action_dim() {
                return Err(Error::shape(format!("action {i} has width {}", a.len())));
            }
            s = self.predict_rows(&s, a);
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Truncated { index: i });
            }
            out.push(s.clone());
        }
        Ok(out)
    }
}

/// Stored `(s, a, s')` triples as flat row-major buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransitionBatch {
    pub state_dim: usize,
    pub action_dim: usize,
    pub states: Vec<f64>,
    pub actions: Vec<f64>,
    pub next_states: Vec<f64>,
}

impl TransitionBatch {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        states: Vec<f64>,
        actions: Vec<f64>,
        next_states: Vec<f64>,
    ) -> Result<Self> {
        if state_dim == 0 || action_dim == 0 {
            return Err(Error::shape("state and action widths must be >= 1"));
        }
        let n = states.len() / state_dim;
        if n == 0
            || states.len() != n * state_dim
            || next_states.len() != n * state_dim
            || actions.len() != n * action_dim
        {
            return Err(Error::shape("transition buffers are empty or inconsistent"));
        }
        if states.iter().chain(&actions).chain(&next_states).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("transition batch"));
        }
        Ok(Self {
            state_dim,
            action_dim,
            states,
            actions,
            next_states,
        })
    }

    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn action(&self, i: usize) -> &[f64] {
        &self.actions[i * self.action_dim..(i + 1) * self.action_dim]
    }

    pub fn next_state(&self, i: usize) -> &[f64] {
        &self.next_states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    /// Concatenated `(s, a)`.
    pub fn input(&self, i: usize) -> Vec<f64> {
        let mut v = self.state(i).to_vec();
        v.extend_from_slice(self.action(i));
        v
    }

    pub fn delta(&self, i: usize) -> Vec<f64> {
        self.next_state(i)
            .iter()
            .zip(self.state(i))
            .map(|(n, s)| n - s)
            .collect()
    }

    /// Concatenated `(s, a, s')`, the vector the density models see.
    pub fn transition_vector(&self, i: usize) -> Vec<f64> {
        let mut v = self.input(i);
        v.extend_from_slice(self.next_state(i));
        v
    }
}

/// Map an unbounded head output smoothly onto `(lo, hi)`; saturates to the
/// bounds exactly in floating point.
pub fn soft_clamp(raw: f64, lo: f64, hi: f64) -> f64 {
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    mid + half * ((raw - mid) / half).tanh()
}

/// Per-dimension Gaussian negative log-likelihood.
pub fn gaussian_nll(mean: f64, logvar: f64, target: f64) -> f64 {
    let d = target - mean;
    0.5 * ((2.0 * PI).ln() + logvar + d * d * (-logvar).exp())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub params: NetworkParams,
    pub input_norm: Normalizer,
    pub output_norm: Normalizer,
    pub state_dim: usize,
    pub action_dim: usize,
    pub logvar_min: f64,
    pub logvar_max: f64,
}

impl DynamicsModel {
    pub fn new(
        params: NetworkParams,
        input_norm: Normalizer,
        output_norm: Normalizer,
        state_dim: usize,
        action_dim: usize,
    ) -> Result<Self> {
        let model = Self {
            params,
            input_norm,
            output_norm,
            state_dim,
            action_dim,
            logvar_min: LOGVAR_MIN,
            logvar_max: LOGVAR_MAX,
        };
        model.validate()?;
        Ok(model)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.input_norm.validate()?;
        self.output_norm.validate()?;
        if self.params.input_dim() != self.state_dim + self.action_dim
            || self.input_norm.dim() != self.state_dim + self.action_dim
        {
            return Err(Error::shape("dynamics input width must be dim(s) + dim(a)"));
        }
        if self.params.output_dim() != 2 * self.state_dim || self.output_norm.dim() != self.state_dim {
            return Err(Error::shape("dynamics output width must be 2 dim(s)"));
        }
        if !(self.logvar_min < self.logvar_max) {
            return Err(Error::contract("log-variance bounds must satisfy min < max"));
        }
        Ok(())
    }

    fn normalized_inputs(&self, states: &[f64], actions: &[f64]) -> Vec<f64> {
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut x = Vec::with_capacity(states.len() / ds * (ds + da));
        for (s, a) in states.chunks(ds).zip(actions.chunks(da)) {
            x.extend_from_slice(s);
            x.extend_from_slice(a);
        }
        self.input_norm.normalize_rows(&mut x);
        x
    }

    /// Variances are in normalized delta units and lie within
    /// `[exp(logvar_min), exp(logvar_max)]`.
    fn heads(&self, s: &[f64], out: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ds = self.state_dim;
        let mean = s
            .iter()
            .zip(&out[..ds])
            .zip(self.output_norm.mean.iter().zip(&self.output_norm.std))
            .map(|((s, o), (m, sd))| s + (o * sd + m))
            .collect();
        let var = out[ds..]
            .iter()
            .map(|r| soft_clamp(*r, self.logvar_min, self.logvar_max).exp())
            .collect();
        (mean, var)
    }
}

impl Dynamics for DynamicsModel {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn as_learned(&self) -> Option<&DynamicsModel> {
        Some(self)
    }

    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn predict(&self, s: &[f64], a: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check(s, a)?;
        let x = self.normalized_inputs(s, a);
        let out = self.params.forward(&Tensor::vector(x))?;
        let (mean, var) = self.heads(s, out.data());
        if mean.iter().chain(&var).any(|v| !v.is_finite()) {
            return Err(Error::non_finite("dynamics prediction"));
        }
        Ok((mean, var))
    }

    fn predict_rows(&self, states: &[f64], actions: &[f64]) -> Vec<f64> {
        let ds = self.state_dim;
        let rows = states.len() / ds;
        let x = self.normalized_inputs(states, actions);
        let out = self.params.forward_rows(&x, rows);
        let mut means = Vec::with_capacity(states.len());
        for (s, o) in states.chunks(ds).zip(out.chunks(2 * ds)) {
            for ((s, o), (m, sd)) in s
                .iter()
                .zip(&o[..ds])
                .zip(self.output_norm.mean.iter().zip(&self.output_norm.std))
            {
                means.push(s + (o * sd + m));
            }
        }
        means
    }
}

impl DynamicsModel {
    /// Next-state mean of one row on a tape, for gradients through rollouts.
    /// `s` and `a` are `1 x dim` vars; parameters enter as constants.
    pub fn taped_step(&self, tape: &mut Tape, net: &TapedNetwork, s: Var, a: Var) -> Result<Var> {
        let ds = self.state_dim;
        let x = tape.concat_cols(s, a)?;
        let width = ds + self.action_dim;
        let mean = tape.leaf(Tensor::matrix(1, width, self.input_norm.mean.clone())?);
        let inv: Vec<f64> = self.input_norm.std.iter().map(|v| 1.0 / v).collect();
        let inv = tape.leaf(Tensor::matrix(1, width, inv)?);
        let centered = tape.sub(x, mean)?;
        let z = tape.mul(centered, inv)?;
        let out = net.forward(tape, z)?;
        let mu = tape.slice_cols(out, 0, ds)?;
        let std = tape.leaf(Tensor::matrix(1, ds, self.output_norm.std.clone())?);
        let shift = tape.leaf(Tensor::matrix(1, ds, self.output_norm.mean.clone())?);
        let scaled = tape.mul(mu, std)?;
        let delta = tape.add(scaled, shift)?;
        tape.add(s, delta)
    }
}

/// Mean per-dimension NLL of normalized delta targets.
fn nll_value(params: &NetworkParams, x: &Tensor, t: &Tensor, lo: f64, hi: f64) -> Result<f64> {
    let ds = t.cols();
    let out = params.forward(x)?;
    let mut total = 0.0;
    for r in 0..t.rows() {
        let o = out.row(r);
        for (d, &target) in t.row(r).iter().enumerate() {
            total += gaussian_nll(o[d], soft_clamp(o[ds + d], lo, hi), target);
        }
    }
    Ok(total / t.len() as f64)
}

fn nll_on_tape(
    net: &TapedNetwork,
    tape: &mut Tape,
    x: &Tensor,
    t: &Tensor,
    lo: f64,
    hi: f64,
) -> Result<Var> {
    let ds = t.cols();
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    let xv = tape.leaf(x.clone());
    let tv = tape.leaf(t.clone());
    let out = net.forward(tape, xv)?;
    let mu = tape.slice_cols(out, 0, ds)?;
    let raw = tape.slice_cols(out, ds, ds)?;
    let u = tape.affine(raw, 1.0 / half, -mid / half);
    let th = tape.tanh(u);
    let lv = tape.affine(th, half, mid);
    let diff = tape.sub(tv, mu)?;
    let sq = tape.square(diff);
    let neg = tape.scale(lv, -1.0);
    let prec = tape.exp(neg);
    let quad = tape.mul(sq, prec)?;
    let per = tape.add(lv, quad)?;
    let total = tape.sum(per);
    Ok(tape.affine(total, 0.5 / t.len() as f64, 0.5 * (2.0 * PI).ln()))
}

impl DynamicsModel {
    fn normalized_pairs(&self, batch: &TransitionBatch, idx: &[usize]) -> Result<(Tensor, Tensor)> {
        let (ds, da) = (self.state_dim, self.action_dim);
        let mut x = Vec::with_capacity(idx.len() * (ds + da));
        let mut t = Vec::with_capacity(idx.len() * ds);
        for &i in idx {
            x.extend(self.input_norm.normalize(&batch.input(i)));
            t.extend(self.output_norm.normalize(&batch.delta(i)));
        }
        Ok((
            Tensor::matrix(idx.len(), ds + da, x)?,
            Tensor::matrix(idx.len(), ds, t)?,
        ))
    }
}

/// Mean per-dimension Gaussian NLL of the batch's normalized deltas.
pub fn nll_loss(model: &DynamicsModel, batch: &TransitionBatch) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::contract("nll_loss needs a non-empty batch"));
    }
    if batch.state_dim != model.state_dim || batch.action_dim != model.action_dim {
        return Err(Error::shape("batch widths do not match the model"));
    }
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (x, t) = model.normalized_pairs(batch, &idx)?;
    nll_value(&model.params, &x, &t, model.logvar_min, model.logvar_max)
}

/// Parameter gradients of [`nll_loss`].
pub fn nll_loss_gradients(model: &DynamicsModel, batch: &TransitionBatch) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..batch.len()).collect();
    let (x, t) = model.normalized_pairs(batch, &idx)?;
    let mut tape = Tape::new();
    let net = model.params.on_tape(&mut tape);
    let loss = nll_on_tape(&net, &mut tape, &x, &t, model.logvar_min, model.logvar_max)?;
    Ok(net.param_gradients(&mut tape, loss)?.flat())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsTrainConfig {
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    pub holdout_fraction: f64,
}

impl Default for DynamicsTrainConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_size: 64,
            epochs: 50,
            batch_size: 32,
            lr: 1e-3,
            seed: 0,
            holdout_fraction: 0.1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DynamicsReport {
    pub train_nll: Vec<f64>,
    pub holdout_nll: Vec<f64>,
    pub degenerate_dims: Vec<usize>,
}

impl DynamicsReport {
    pub fn warning(&self) -> bool {
        !self.degenerate_dims.is_empty()
    }
}

/// Fit normalizers on the whole batch and train by shuffled minibatch Adam.
/// `init` warm-starts the network weights; normalizers are always refit.
pub fn train_dynamics(
    batch: &TransitionBatch,
    cfg: &DynamicsTrainConfig,
    init: Option<&DynamicsModel>,
) -> Result<(DynamicsModel, DynamicsReport)> {
    let n = batch.len();
    if n < 2 {
        return Err(Error::contract("dynamics training needs at least 2 transitions"));
    }
    if cfg.epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config("epochs and batch_size must be >= 1"));
    }
    if !(0.0..1.0).contains(&cfg.holdout_fraction) {
        return Err(Error::config("holdout_fraction must be in [0, 1)"));
    }
    let (ds, da) = (batch.state_dim, batch.action_dim);
    let inputs: Vec<Vec<f64>> = (0..n).map(|i| batch.input(i)).collect();
    let deltas: Vec<Vec<f64>> = (0..n).map(|i| batch.delta(i)).collect();
    let input_norm = Normalizer::fit(inputs.iter().map(Vec::as_slice), ds + da)?;
    let output_norm = Normalizer::fit(deltas.iter().map(Vec::as_slice), ds)?;
    let mut degenerate = input_norm.degenerate.clone();
    degenerate.extend(output_norm.degenerate.iter().map(|d| d + ds + da));
    if !degenerate.is_empty() {
        log::warn!("dynamics data has zero-variance columns {degenerate:?}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let holdout = ((n as f64 * cfg.holdout_fraction).round() as usize).min(n - 1);
    let (val_idx, train_idx) = order.split_at(holdout);
    let mut train_idx = train_idx.to_vec();
    let val_idx = if val_idx.is_empty() {
        train_idx.clone()
    } else {
        val_idx.to_vec()
    };

    let params = match init {
        Some(m) if m.state_dim == ds && m.action_dim == da => m.params.clone(),
        Some(_) => return Err(Error::shape("warm-start model has the wrong widths")),
        None => {
            let mut sizes = vec![ds + da];
            sizes.extend(std::iter::repeat_n(cfg.hidden_size, cfg.hidden_layers));
            sizes.push(2 * ds);
            NetworkParams::init(&sizes, Activation::Softplus, &mut rng)
        }
    };
    let mut model = DynamicsModel::new(params, input_norm, output_norm, ds, da)?;
    let (lo, hi) = (model.logvar_min, model.logvar_max);
    let (val_x, val_t) = model.normalized_pairs(batch, &val_idx)?;
    let mut adam = AdamState::for_network(&model.params, AdamConfig::with_lr(cfg.lr))?;
    let mut report = DynamicsReport {
        degenerate_dims: degenerate,
        ..DynamicsReport::default()
    };

    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let (x, t) = model.normalized_pairs(batch, chunk)?;
            let mut tape = Tape::new();
            let net = model.params.on_tape(&mut tape);
            let loss = nll_on_tape(&net, &mut tape, &x, &t, lo, hi)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::non_finite(format!("dynamics loss at epoch {epoch}")));
            }
            let grads = net.param_gradients(&mut tape, loss)?;
            adam_step(&mut model.params, &grads, &mut adam)?;
            total += value * chunk.len() as f64;
        }
        report.train_nll.push(total / train_idx.len() as f64);
        report.holdout_nll.push(nll_value(&model.params, &val_x, &val_t, lo, hi)?);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn zero_model(ds: usize, da: usize, out_mean: Vec<f64>) -> DynamicsModel {
        let layer = Layer {
            weight: Tensor::zeros(&[2 * ds, ds + da]),
            bias: Tensor::vector(vec![0.0; 2 * ds]),
            activation: Activation::Identity,
        };
        let mut out = Normalizer::identity(ds);
        out.mean = out_mean;
        DynamicsModel::new(
            NetworkParams::new(vec![layer]).unwrap(),
            Normalizer::identity(ds + da),
            out,
            ds,
            da,
        )
        .unwrap()
    }

    #[test]
    fn zero_network_predicts_state_plus_mean_delta() {
        let m = zero_model(2, 1, vec![0.5, -1.0]);
        let (mean, var) = m.predict(&[1.0, 2.0], &[3.0]).unwrap();
        assert_eq!(mean, vec![1.5, 1.0]);
        assert_eq!(var, vec![soft_clamp(0.0, LOGVAR_MIN, LOGVAR_MAX).exp(); 2]);
        assert_eq!(m.predict_rows(&[1.0, 2.0], &[3.0]), mean);
    }

    #[test]
    fn log_variance_saturates_at_the_bounds() {
        let mut m = zero_model(1, 1, vec![0.0]);
        m.params.layers_mut()[0].bias.data_mut()[1] = 1e6;
        let (_, var) = m.predict(&[0.0], &[0.0]).unwrap();
        assert_eq!(var[0], LOGVAR_MAX.exp());
        m.params.layers_mut()[0].bias.data_mut()[1] = -1e6;
        let (_, var) = m.predict(&[0.0], &[0.0]).unwrap();
        assert_eq!(var[0], LOGVAR_MIN.exp());
    }

    #[test]
    fn nll_analytic_values() {
        assert!((gaussian_nll(0.3, 0.0, 0.3) - 0.5 * (2.0 * PI).ln()).abs() < 1e-15);
        let base = gaussian_nll(0.0, 0.0, 0.5);
        let doubled = gaussian_nll(0.0, 0.0, 1.0);
        assert!((doubled - base - (1.0 - 0.25) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn nll_loss_with_exact_mean_and_unit_variance() {
        let mut m = zero_model(1, 1, vec![0.0]);
        // Raw head value that the clamp maps to log-variance 0.
        let mid = 0.5 * (LOGVAR_MIN + LOGVAR_MAX);
        let half = 0.5 * (LOGVAR_MAX - LOGVAR_MIN);
        m.params.layers_mut()[0].bias.data_mut()[1] = mid + half * (-mid / half).atanh();
        let batch = TransitionBatch::new(1, 1, vec![1.0, 2.0], vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let l = nll_loss(&m, &batch).unwrap();
        assert!((l - 0.5 * (2.0 * PI).ln()).abs() < 1e-12);
    }

    #[test]
    fn taped_and_value_losses_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = NetworkParams::init(&[3, 5, 4], Activation::Softplus, &mut rng);
        let m = DynamicsModel::new(params, Normalizer::identity(3), Normalizer::identity(2), 2, 1).unwrap();
        let x = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.3, 1.0, 0.2, -0.7]).unwrap();
        let t = Tensor::matrix(2, 2, vec![0.5, -0.1, 0.0, 0.3]).unwrap();
        let mut tape = Tape::new();
        let net = m.params.on_tape(&mut tape);
        let l = nll_on_tape(&net, &mut tape, &x, &t, LOGVAR_MIN, LOGVAR_MAX).unwrap();
        let v = nll_value(&m.params, &x, &t, LOGVAR_MIN, LOGVAR_MAX).unwrap();
        assert!((tape.value(l).data()[0] - v).abs() < 1e-13);
    }

    #[test]
    fn empty_and_undersized_inputs_are_rejected() {
        assert!(TransitionBatch::new(1, 1, vec![], vec![], vec![]).is_err());
        assert!(TransitionBatch::new(1, 1, vec![f64::NAN], vec![0.0], vec![0.0]).is_err());
        let one = TransitionBatch::new(1, 1, vec![0.0], vec![0.0], vec![0.0]).unwrap();
        assert!(train_dynamics(&one, &DynamicsTrainConfig::default(), None).is_err());
    }

    #[test]
    fn rollout_truncates_on_non_finite_state() {
        let mut m = zero_model(1, 1, vec![0.0]);
        m.params.layers_mut()[0].weight.data_mut()[0] = 1e200;
        let actions = vec![vec![0.0]; 4];
        match m.rollout(&[1e200], &actions) {
            Err(Error::Truncated { index }) => assert_eq!(index, 0),
            other => panic!("expected truncation, got {other:?}"),
        }
    }
}
