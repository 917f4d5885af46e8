//! Reverse-mode automatic differentiation over a recorded tape.
//!
//! Every primitive records its inputs and output; `backward` walks the
//! records strictly in reverse, touching each exactly once, and flushes
//! parameter gradients into the [`ParameterStore`]. A tape and its tensors
//! belong to one run; parameters enter as value snapshots taken when
//! [`Tape::param`] is called.

use super::params::{ParamId, ParameterStore};
use super::tensor::Tensor;
use crate::error::{AmpError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Concat(Var, Var),
    SliceRows(Var, usize),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    RowSum(Var),
    ScaleConst(Var, f64),
    ScaleBy(Var, Var),
    SoftmaxCrossEntropy(Var, usize),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Records a constant input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, rows: usize, cols: usize) -> Var {
        self.leaf(Tensor::zeros(rows, cols))
    }

    pub fn scalar(&mut self, v: f64) -> Var {
        self.leaf(Tensor::scalar(v))
    }

    /// Snapshots a parameter's current value; backward accumulates into its
    /// gradient slot.
    pub fn param(&mut self, store: &ParameterStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Param(id))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(value, Op::Hadamard(a, b)))
    }

    /// Vertical concatenation of column vectors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols != 1 || tb.cols != 1 {
            return Err(AmpError::contract("concat expects column vectors".to_string()));
        }
        let mut data = ta.data.clone();
        data.extend_from_slice(&tb.data);
        let value = Tensor::column(&data);
        Ok(self.push(value, Op::Concat(a, b)))
    }

    /// Rows `start..start+len` of a column vector.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let t = self.value(x);
        if t.cols != 1 || start + len > t.rows {
            return Err(AmpError::contract(format!(
                "slice {start}..{} out of range for {}x{}",
                start + len,
                t.rows,
                t.cols
            )));
        }
        let value = Tensor::column(&t.data[start..start + len]);
        Ok(self.push(value, Op::SliceRows(x, start)))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        self.push(value, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| 1.0 / (1.0 + (-v).exp()));
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        self.push(value, Op::Tanh(x))
    }

    /// Sums each row: `(r, c) -> (r, 1)`.
    pub fn row_sum(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let sums: Vec<f64> = (0..t.rows)
            .map(|r| t.data[r * t.cols..(r + 1) * t.cols].iter().sum())
            .collect();
        self.push(Tensor::column(&sums), Op::RowSum(x))
    }

    pub fn scale_const(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::ScaleConst(x, c))
    }

    /// Broadcast product with a scalar variable `(1, 1)`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var> {
        let st = self.value(s);
        if st.shape() != (1, 1) {
            return Err(AmpError::contract("scale_by expects a scalar variable".to_string()));
        }
        let factor = st.item();
        let value = self.value(x).map(|v| v * factor);
        Ok(self.push(value, Op::ScaleBy(x, s)))
    }

    /// `W x + b`.
    pub fn affine(&mut self, w: Var, x: Var, b: Var) -> Result<Var> {
        let wx = self.matmul(w, x)?;
        self.add(wx, b)
    }

    /// Cross-entropy of softmax(logits) against `label`; returns a scalar.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.cols != 1 || label >= t.rows {
            return Err(AmpError::contract(format!(
                "cross entropy needs a column of logits covering label {label}"
            )));
        }
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = max + t.data.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        let loss = log_z - t.data[label];
        Ok(self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy(logits, label)))
    }

    /// Softmax probabilities of a recorded logits variable (forward only).
    pub fn softmax_values(&self, logits: Var) -> Vec<f64> {
        let t = self.value(logits);
        let max = t.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = t.data.iter().map(|v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }

    /// Reverse sweep from `output` (must be scalar), accumulating parameter
    /// gradients into `store`. Each record is touched exactly once; a second
    /// backward on the same tape is an error.
    pub fn backward(&mut self, output: Var, store: &mut ParameterStore) -> Result<()> {
        if self.backward_done {
            return Err(AmpError::contract(
                "backward already ran on this tape; record a new forward pass".to_string(),
            ));
        }
        self.backward_done = true;
        if self.value(output).shape() != (1, 1) {
            return Err(AmpError::contract("backward output must be scalar".to_string()));
        }

        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..self.nodes.len()).rev() {
            let Some(grad) = grads[idx].take() else { continue };
            let op = self.nodes[idx].op.clone();
            match op {
                Op::Leaf => {}
                Op::Param(id) => store.accumulate_grad(id, &grad),
                Op::MatMul(a, b) => {
                    let ga = grad.matmul(&self.value(b).transpose())?;
                    let gb = self.value(a).transpose().matmul(&grad)?;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, grad.clone());
                    accumulate(&mut grads, b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, b, grad.map(|g| -g));
                    accumulate(&mut grads, a, grad);
                }
                Op::Hadamard(a, b) => {
                    let ga = grad.zip(self.value(b), |g, y| g * y)?;
                    let gb = grad.zip(self.value(a), |g, x| g * x)?;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Concat(a, b) => {
                    let na = self.value(a).rows;
                    accumulate(&mut grads, a, Tensor::column(&grad.data[..na]));
                    accumulate(&mut grads, b, Tensor::column(&grad.data[na..]));
                }
                Op::SliceRows(x, start) => {
                    let mut gx = Tensor::zeros(self.value(x).rows, 1);
                    gx.data[start..start + grad.rows].copy_from_slice(&grad.data);
                    accumulate(&mut grads, x, gx);
                }
                Op::Relu(x) => {
                    let gx = grad.zip(&self.nodes[idx].value, |g, y| if y > 0.0 { g } else { 0.0 })?;
                    accumulate(&mut grads, x, gx);
                }
                Op::Sigmoid(x) => {
                    let gx = grad.zip(&self.nodes[idx].value, |g, y| g * y * (1.0 - y))?;
                    accumulate(&mut grads, x, gx);
                }
                Op::Tanh(x) => {
                    let gx = grad.zip(&self.nodes[idx].value, |g, y| g * (1.0 - y * y))?;
                    accumulate(&mut grads, x, gx);
                }
                Op::RowSum(x) => {
                    let t = self.value(x);
                    let mut gx = Tensor::zeros(t.rows, t.cols);
                    for r in 0..t.rows {
                        for c in 0..t.cols {
                            gx.data[r * t.cols + c] = grad.data[r];
                        }
                    }
                    accumulate(&mut grads, x, gx);
                }
                Op::ScaleConst(x, c) => {
                    accumulate(&mut grads, x, grad.map(|g| g * c));
                }
                Op::ScaleBy(x, s) => {
                    let factor = self.value(s).item();
                    let gx = grad.map(|g| g * factor);
                    let gs: f64 = grad.data.iter().zip(&self.value(x).data).map(|(g, v)| g * v).sum();
                    accumulate(&mut grads, x, gx);
                    accumulate(&mut grads, s, Tensor::scalar(gs));
                }
                Op::SoftmaxCrossEntropy(logits, label) => {
                    let g = grad.item();
                    let mut probs = self.softmax_values(logits);
                    probs[label] -= 1.0;
                    let gl = Tensor::column(&probs).map(|p| p * g);
                    accumulate(&mut grads, logits, gl);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, grad: Tensor) {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => *slot = Some(grad),
    }
}
