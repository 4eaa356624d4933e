//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! Every node holds a 2-D value. [`Tape::grad`] walks the tape backwards and
//! records the backward pass as ordinary tape operations, so the returned
//! gradient nodes can themselves be differentiated. This is what makes losses
//! that contain input gradients (double backpropagation) trainable.

use crate::error::{Error, Result};
use crate::tensor::{matmul, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool },
    /// `x (n x m) + b (1 x m)` broadcast over rows.
    AddBias { x: Var, b: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// `k * x + c`; the shift does not enter the backward pass.
    Affine { x: Var, k: f64 },
    Softplus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Square(Var),
    /// Sum of every element into a `1 x 1` node.
    Sum(Var),
    /// Broadcast a `1 x 1` node to `rows x cols`.
    Expand(Var),
    /// Column sums, `n x m -> 1 x m`.
    SumRows(Var),
    /// Repeat a `1 x m` row `rows` times.
    BroadcastRows(Var),
    SliceCols { x: Var, start: usize },
    PadCols { x: Var, start: usize },
    ConcatCols(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub fn softplus(x: f64) -> f64 {
    // ln(1 + e^x) without overflow for large |x|
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf node. Whether a leaf is a parameter or data is decided by the
    /// `wrt` list passed to [`Tape::grad`]; the tape itself does not care.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value.as_matrix(), Op::Leaf)
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b), ta, tb)?;
        Ok(self.push(value, Op::MatMul { a, b, ta, tb }))
    }

    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (r, c) = self.dims(x);
        let (br, bc) = self.dims(b);
        if br != 1 || bc != c {
            return Err(Error::shape(format!(
                "bias {br}x{bc} does not broadcast over {r}x{c}"
            )));
        }
        let bias = self.value(b).data().to_vec();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(&bias) {
                *o += bv;
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        Ok(self.push(value, Op::AddBias { x, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn affine(&mut self, x: Var, k: f64, c: f64) -> Var {
        let value = self.value(x).map(|v| k * v + c);
        self.push(value, Op::Affine { x, k })
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.affine(x, k, 0.0)
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let value = self.value(x).map(softplus);
        self.push(value, Op::Softplus(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        self.push(value, Op::Exp(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v * v);
        self.push(value, Op::Square(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).len() as f64;
        let s = self.sum(x);
        self.scale(s, 1.0 / n)
    }

    pub fn expand(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var> {
        if self.dims(x) != (1, 1) {
            return Err(Error::shape("expand needs a 1x1 node"));
        }
        let v = self.value(x).data()[0];
        let value = Tensor::filled(&[rows, cols], v);
        Ok(self.push(value, Op::Expand(x)))
    }

    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let c = t.cols();
        let mut out = vec![0.0; c];
        for row in t.data().chunks(c) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let value = Tensor::matrix(1, c, out)?;
        Ok(self.push(value, Op::SumRows(x)))
    }

    pub fn broadcast_rows(&mut self, x: Var, rows: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if r != 1 {
            return Err(Error::shape("broadcast_rows needs a single row"));
        }
        let row = self.value(x).data();
        let mut out = Vec::with_capacity(rows * c);
        for _ in 0..rows {
            out.extend_from_slice(row);
        }
        let value = Tensor::matrix(rows, c, out)?;
        Ok(self.push(value, Op::BroadcastRows(x)))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(Error::shape(format!(
                "column slice {start}..{} out of {c}",
                start + len
            )));
        }
        let t = self.value(x);
        let mut out = Vec::with_capacity(r * len);
        for row in t.data().chunks(c) {
            out.extend_from_slice(&row[start..start + len]);
        }
        let value = Tensor::matrix(r, len, out)?;
        Ok(self.push(value, Op::SliceCols { x, start }))
    }

    pub fn pad_cols(&mut self, x: Var, start: usize, total: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if start + c > total {
            return Err(Error::shape("padding narrower than input"));
        }
        let t = self.value(x);
        let mut out = vec![0.0; r * total];
        for (i, row) in t.data().chunks(c).enumerate() {
            out[i * total + start..i * total + start + c].copy_from_slice(row);
        }
        let value = Tensor::matrix(r, total, out)?;
        Ok(self.push(value, Op::PadCols { x, start }))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ra, ca) = self.dims(a);
        let (rb, cb) = self.dims(b);
        if ra != rb {
            return Err(Error::shape("concat_cols row mismatch"));
        }
        let (ta, tb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ra * (ca + cb));
        for i in 0..ra {
            out.extend_from_slice(&ta[i * ca..(i + 1) * ca]);
            out.extend_from_slice(&tb[i * cb..(i + 1) * cb]);
        }
        let value = Tensor::matrix(ra, ca + cb, out)?;
        Ok(self.push(value, Op::ConcatCols(a, b)))
    }

    /// Gradients of the scalar `output` with respect to `wrt`, recorded on
    /// the tape. Entries for variables that `output` does not depend on are
    /// zero-valued leaves.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.dims(output) != (1, 1) {
            return Err(Error::contract("gradient requested of a non-scalar node"));
        }
        if !self.value(output).is_finite() {
            return Err(Error::non_finite("loss before differentiation"));
        }
        let n = output.0 + 1;
        let mut relevant = vec![false; n];
        for v in wrt {
            if v.0 < n {
                relevant[v.0] = true;
            }
        }
        for i in 0..n {
            if relevant[i] {
                continue;
            }
            relevant[i] = inputs(self.nodes[i].op)
                .iter()
                .flatten()
                .any(|v| relevant[v.0]);
        }

        let mut grads: Vec<Option<Var>> = vec![None; n];
        grads[output.0] = Some(self.leaf(Tensor::scalar(1.0)));
        for i in (0..n).rev() {
            if !relevant[i] {
                continue;
            }
            let Some(g) = grads[i] else { continue };
            let op = self.nodes[i].op;
            let node = Var(i);
            for (input, contrib) in self.backward_op(node, op, g, &relevant)? {
                let slot = &mut grads[input.0];
                *slot = Some(match *slot {
                    None => contrib,
                    Some(prev) => self.add(prev, contrib)?,
                });
            }
        }

        wrt.iter()
            .map(|v| match grads.get(v.0).copied().flatten() {
                Some(g) => Ok(g),
                None => {
                    let (r, c) = self.dims(*v);
                    Ok(self.leaf(Tensor::zeros(&[r, c])))
                }
            })
            .collect()
    }

    /// Gradient values of `output` with respect to `wrt`.
    pub fn gradients(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        let vars = self.grad(output, wrt)?;
        Ok(vars.into_iter().map(|g| self.value(g).clone()).collect())
    }

    fn backward_op(
        &mut self,
        node: Var,
        op: Op,
        g: Var,
        relevant: &[bool],
    ) -> Result<Vec<(Var, Var)>> {
        let want = |v: Var| relevant[v.0];
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                if want(a) {
                    let ga = if ta {
                        self.matmul(b, g, tb, true)?
                    } else {
                        self.matmul(g, b, false, !tb)?
                    };
                    out.push((a, ga));
                }
                if want(b) {
                    let gb = if tb {
                        self.matmul(g, a, true, ta)?
                    } else {
                        self.matmul(a, g, !ta, false)?
                    };
                    out.push((b, gb));
                }
            }
            Op::AddBias { x, b } => {
                if want(x) {
                    out.push((x, g));
                }
                if want(b) {
                    let gb = self.sum_rows(g)?;
                    out.push((b, gb));
                }
            }
            Op::Add(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if want(a) {
                    out.push((a, g));
                }
                if want(b) {
                    let gb = self.scale(g, -1.0);
                    out.push((b, gb));
                }
            }
            Op::Mul(a, b) => {
                if want(a) {
                    let ga = self.mul(g, b)?;
                    out.push((a, ga));
                }
                if want(b) {
                    let gb = self.mul(g, a)?;
                    out.push((b, gb));
                }
            }
            Op::Affine { x, k } => {
                let gx = self.scale(g, k);
                out.push((x, gx));
            }
            Op::Softplus(x) => {
                let s = self.sigmoid(x);
                let gx = self.mul(g, s)?;
                out.push((x, gx));
            }
            Op::Sigmoid(x) => {
                let one_minus = self.affine(node, -1.0, 1.0);
                let d = self.mul(node, one_minus)?;
                let gx = self.mul(g, d)?;
                out.push((x, gx));
            }
            Op::Tanh(x) => {
                let sq = self.square(node);
                let d = self.affine(sq, -1.0, 1.0);
                let gx = self.mul(g, d)?;
                out.push((x, gx));
            }
            Op::Exp(x) => {
                let gx = self.mul(g, node)?;
                out.push((x, gx));
            }
            Op::Square(x) => {
                let two_x = self.scale(x, 2.0);
                let gx = self.mul(g, two_x)?;
                out.push((x, gx));
            }
            Op::Sum(x) => {
                let (r, c) = self.dims(x);
                let gx = self.expand(g, r, c)?;
                out.push((x, gx));
            }
            Op::Expand(x) => {
                let gx = self.sum(g);
                out.push((x, gx));
            }
            Op::SumRows(x) => {
                let r = self.dims(x).0;
                let gx = self.broadcast_rows(g, r)?;
                out.push((x, gx));
            }
            Op::BroadcastRows(x) => {
                let gx = self.sum_rows(g)?;
                out.push((x, gx));
            }
            Op::SliceCols { x, start } => {
                let total = self.dims(x).1;
                let gx = self.pad_cols(g, start, total)?;
                out.push((x, gx));
            }
            Op::PadCols { x, start } => {
                let len = self.dims(x).1;
                let gx = self.slice_cols(g, start, len)?;
                out.push((x, gx));
            }
            Op::ConcatCols(a, b) => {
                let ca = self.dims(a).1;
                let cb = self.dims(b).1;
                if want(a) {
                    let ga = self.slice_cols(g, 0, ca)?;
                    out.push((a, ga));
                }
                if want(b) {
                    let gb = self.slice_cols(g, ca, cb)?;
                    out.push((b, gb));
                }
            }
        }
        Ok(out)
    }
}

fn inputs(op: Op) -> [Option<Var>; 2] {
    match op {
        Op::Leaf => [None, None],
        Op::MatMul { a, b, .. } | Op::AddBias { x: a, b } => [Some(a), Some(b)],
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::ConcatCols(a, b) => {
            [Some(a), Some(b)]
        }
        Op::Affine { x, .. }
        | Op::Softplus(x)
        | Op::Sigmoid(x)
        | Op::Tanh(x)
        | Op::Exp(x)
        | Op::Square(x)
        | Op::Sum(x)
        | Op::Expand(x)
        | Op::SumRows(x)
        | Op::BroadcastRows(x)
        | Op::SliceCols { x, .. }
        | Op::PadCols { x, .. } => [Some(x), None],
    }
}
