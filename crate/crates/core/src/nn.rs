//! Feedforward networks: parameters, a direct forward path used for
//! evaluation, and a taped path used for training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{sigmoid, softplus, Tape, Var};
use crate::tensor::{dot, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Softplus,
    Tanh,
    /// `x^2`; mostly useful for building closed-form test networks.
    Square,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => softplus(x),
            Activation::Tanh => x.tanh(),
            Activation::Square => x * x,
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Softplus => sigmoid(x),
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Square => 2.0 * x,
            Activation::Identity => 1.0,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Softplus => 0,
            Activation::Tanh => 1,
            Activation::Identity => 2,
            Activation::Square => 3,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Softplus),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Identity),
            3 => Some(Activation::Square),
            _ => None,
        }
    }

    fn on_tape(self, tape: &mut Tape, x: Var) -> Var {
        match self {
            Activation::Softplus => tape.softplus(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Square => tape.square(x),
            Activation::Identity => x,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `fan_out x fan_in`
    pub weight: Tensor,
    /// length `fan_out`
    pub bias: Tensor,
    pub activation: Activation,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("network needs at least one layer"));
        }
        for (i, layer) in layers.iter().enumerate() {
            if layer.weight.shape().len() != 2 || layer.bias.len() != layer.fan_out() {
                return Err(Error::shape(format!("layer {i} has inconsistent bias")));
            }
            if i > 0 && layers[i - 1].fan_out() != layer.fan_in() {
                return Err(Error::shape(format!(
                    "layer {i} expects {} inputs but layer {} produces {}",
                    layer.fan_in(),
                    i - 1,
                    layers[i - 1].fan_out()
                )));
            }
            if !layer.weight.is_finite() || !layer.bias.is_finite() {
                return Err(Error::non_finite(format!("parameters of layer {i}")));
            }
        }
        Ok(Self { layers })
    }

    /// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` weights, zero biases.
    /// `sizes` lists widths from input to output; the last layer is linear.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], hidden: Activation, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need input and output widths");
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for (i, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            let activation = if i + 2 == sizes.len() {
                Activation::Identity
            } else {
                hidden
            };
            layers.push(Layer {
                weight: Tensor::matrix(fan_out, fan_in, w).expect("consistent init"),
                bias: Tensor::zeros(&[fan_out]),
                activation,
            });
        }
        Self { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                input.cols()
            )));
        }
        Ok(())
    }

    /// Output of the final layer. A rank-1 input yields a rank-1 output.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let rows = input.rows();
        let mut x = input.data().to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer_forward(layer, &x, rows);
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::non_finite(format!("activations of layer {i}")));
            }
        }
        let out = self.output_dim();
        if input.shape().len() == 1 {
            Tensor::new(vec![out], x)
        } else {
            Tensor::matrix(rows, out, x)
        }
    }

    /// Row-batched forward without finiteness checks. Each output row depends
    /// only on the matching input row, with a fixed summation order, so the
    /// result is independent of how rows are batched.
    pub fn forward_rows(&self, input: &[f64], rows: usize) -> Vec<f64> {
        debug_assert_eq!(input.len(), rows * self.input_dim());
        let mut x = input.to_vec();
        for layer in &self.layers {
            x = layer_forward(layer, &x, rows);
        }
        x
    }

    /// Gradient of the scalar output with respect to the input, per row.
    pub fn input_gradient(&self, input: &Tensor) -> Result<Tensor> {
        if self.output_dim() != 1 {
            return Err(Error::contract(format!(
                "input gradient needs a scalar-output network, this one has {} outputs",
                self.output_dim()
            )));
        }
        self.check_input(input)?;
        let rows = input.rows();
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.data().to_vec();
        for layer in &self.layers {
            let z = layer_affine(layer, &x, rows);
            x = z.iter().map(|&v| layer.activation.apply(v)).collect();
            pre.push(z);
        }
        let mut delta = vec![1.0; rows];
        for (layer, z) in self.layers.iter().zip(&pre).rev() {
            let (fin, fout) = (layer.fan_in(), layer.fan_out());
            for (d, &zv) in delta.iter_mut().zip(z) {
                *d *= layer.activation.derivative(zv);
            }
            let w = layer.weight.data();
            let mut next = vec![0.0; rows * fin];
            for r in 0..rows {
                let dr = &delta[r * fout..(r + 1) * fout];
                let nr = &mut next[r * fin..(r + 1) * fin];
                for (o, &dv) in dr.iter().enumerate() {
                    for (n, &wv) in nr.iter_mut().zip(&w[o * fin..(o + 1) * fin]) {
                        *n += dv * wv;
                    }
                }
            }
            delta = next;
        }
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("input gradient"));
        }
        Tensor::new(input.shape().to_vec(), delta)
    }

    /// Place the parameters on a tape as leaves.
    pub fn on_tape(&self, tape: &mut Tape) -> TapedNetwork {
        let mut weights = Vec::with_capacity(self.layers.len());
        let mut biases = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            weights.push(tape.leaf(layer.weight.clone()));
            let b = Tensor::matrix(1, layer.fan_out(), layer.bias.data().to_vec())
                .expect("bias row");
            biases.push(tape.leaf(b));
        }
        TapedNetwork {
            weights,
            biases,
            activations: self.layers.iter().map(|l| l.activation).collect(),
        }
    }

    pub fn zeros_like(&self) -> Gradients {
        Gradients {
            weights: self
                .layers
                .iter()
                .map(|l| Tensor::zeros(l.weight.shape()))
                .collect(),
            biases: self
                .layers
                .iter()
                .map(|l| Tensor::zeros(l.bias.shape()))
                .collect(),
        }
    }

    /// Flat view of every parameter, weights then bias per layer.
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(l.weight.data());
            out.extend_from_slice(l.bias.data());
        }
        out
    }

    pub fn set_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::shape("flat parameter length"));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let n = l.weight.len();
            l.weight.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
            let n = l.bias.len();
            l.bias.data_mut().copy_from_slice(&values[off..off + n]);
            off += n;
        }
        Ok(())
    }
}

fn layer_affine(layer: &Layer, x: &[f64], rows: usize) -> Vec<f64> {
    let (fin, fout) = (layer.fan_in(), layer.fan_out());
    let w = layer.weight.data();
    let b = layer.bias.data();
    let mut out = Vec::with_capacity(rows * fout);
    for r in 0..rows {
        let xr = &x[r * fin..(r + 1) * fin];
        for o in 0..fout {
            out.push(b[o] + dot(&w[o * fin..(o + 1) * fin], xr));
        }
    }
    out
}

fn layer_forward(layer: &Layer, x: &[f64], rows: usize) -> Vec<f64> {
    let mut z = layer_affine(layer, x, rows);
    if layer.activation != Activation::Identity {
        for v in &mut z {
            *v = layer.activation.apply(*v);
        }
    }
    z
}

/// Parameter gradients, shaped like [`NetworkParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.data());
            out.extend_from_slice(b.data());
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(Tensor::is_finite)
    }
}

/// A network whose parameters live on a [`Tape`].
#[derive(Clone, Debug)]
pub struct TapedNetwork {
    weights: Vec<Var>,
    biases: Vec<Var>,
    activations: Vec<Activation>,
}

impl TapedNetwork {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let mut h = x;
        for ((&w, &b), &act) in self.weights.iter().zip(&self.biases).zip(&self.activations) {
            let z = tape.matmul(h, w, false, true)?;
            let z = tape.add_bias(z, b)?;
            h = act.on_tape(tape, z);
        }
        Ok(h)
    }

    /// Taped input gradient of a scalar-output network, one row per input
    /// row. The result stays differentiable with respect to the parameters.
    pub fn input_gradient(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let out = self.forward(tape, x)?;
        if tape.value(out).cols() != 1 {
            return Err(Error::contract("input gradient needs a scalar-output network"));
        }
        let total = tape.sum(out);
        Ok(tape.grad(total, &[x])?[0])
    }

    pub fn param_vars(&self) -> Vec<Var> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }

    /// Exact reverse-mode gradients of `loss`, including any second-order
    /// paths through taped input gradients.
    pub fn param_gradients(&self, tape: &mut Tape, loss: Var) -> Result<Gradients> {
        let vars = self.param_vars();
        let grads = tape.gradients(loss, &vars)?;
        let mut weights = Vec::with_capacity(self.weights.len());
        let mut biases = Vec::with_capacity(self.biases.len());
        for pair in grads.chunks(2) {
            weights.push(pair[0].clone());
            let b = &pair[1];
            biases.push(Tensor::vector(b.data().to_vec()));
        }
        Ok(Gradients { weights, biases })
    }
}
