//! Flat named storage for learnable parameters, their gradient accumulators,
//! and the optimizer moments.

use super::tensor::Tensor;
use crate::error::{AmpError, Result};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
struct Entry {
    value: Tensor,
    grad: Tensor,
    moment1: Tensor,
    moment2: Tensor,
}

/// Learnable parameters with matching gradient and Adam moment buffers.
/// Insertion order is the iteration order, so training is reproducible.
#[derive(Debug, Clone, Default)]
pub struct ParameterStore {
    entries: IndexMap<String, Entry>,
    step: u64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; re-registering the same name must pass an equal
    /// shape and returns the existing slot.
    pub fn register(&mut self, name: &str, init: Tensor) -> Result<ParamId> {
        if let Some(idx) = self.entries.get_index_of(name) {
            let existing = &self.entries[idx];
            if existing.value.shape() != init.shape() {
                return Err(AmpError::contract(format!(
                    "parameter {name} re-registered with shape {:?}, have {:?}",
                    init.shape(),
                    existing.value.shape()
                )));
            }
            return Ok(ParamId(idx));
        }
        let (rows, cols) = init.shape();
        let entry = Entry {
            value: init,
            grad: Tensor::zeros(rows, cols),
            moment1: Tensor::zeros(rows, cols),
            moment2: Tensor::zeros(rows, cols),
        };
        let (idx, _) = self.entries.insert_full(name.to_string(), entry);
        Ok(ParamId(idx))
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.entries.get_index_of(name).map(ParamId)
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn grad(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].grad
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn param_count(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, grad: &Tensor) {
        self.entries[id.0].grad.add_assign(grad);
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.data.fill(0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in self.entries.values_mut() {
            for g in &mut e.grad.data {
                *g *= factor;
            }
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|e| e.grad.data.iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Scales gradients down so the global norm does not exceed `max_norm`.
    pub fn clip_grad_norm(&mut self, max_norm: f64) {
        let norm = self.grad_norm();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
    }

    /// One bias-corrected Adam update; gradients are zeroed afterward.
    pub fn adam_step(&mut self, lr: f64) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - ADAM_BETA1.powf(t);
        let bc2 = 1.0 - ADAM_BETA2.powf(t);
        for e in self.entries.values_mut() {
            for i in 0..e.value.data.len() {
                let g = e.grad.data[i];
                e.moment1.data[i] = ADAM_BETA1 * e.moment1.data[i] + (1.0 - ADAM_BETA1) * g;
                e.moment2.data[i] = ADAM_BETA2 * e.moment2.data[i] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = e.moment1.data[i] / bc1;
                let v_hat = e.moment2.data[i] / bc2;
                e.value.data[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
            e.grad.data.fill(0.0);
        }
    }

    pub fn adam_steps_taken(&self) -> u64 {
        self.step
    }

    /// Test access: nudge one parameter entry (finite-difference probes).
    pub fn nudge(&mut self, id: ParamId, index: usize, delta: f64) {
        self.entries[id.0].value.data[index] += delta;
    }

    /// Overwrites a parameter's values bit-exactly (checkpoint restore).
    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.shape() != value.shape() {
            return Err(AmpError::contract(format!(
                "set_value shape {:?} != registered {:?}",
                value.shape(),
                entry.value.shape()
            )));
        }
        entry.value = value;
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    params: IndexMap<String, Tensor>,
}

pub const CHECKPOINT_VERSION: u32 = 1;

/// Writes the versioned JSON checkpoint: name -> shape + row-major values.
pub fn save_checkpoint<W: Write>(store: &ParameterStore, mut out: W) -> Result<()> {
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        params: store
            .entries
            .iter()
            .map(|(k, e)| (k.clone(), e.value.clone()))
            .collect(),
    };
    serde_json::to_writer(&mut out, &file)?;
    writeln!(out)?;
    Ok(())
}

/// Loads a checkpoint into a fresh store (moments reset, step zero).
pub fn load_checkpoint<R: BufRead>(input: R) -> Result<ParameterStore> {
    let file: CheckpointFile = serde_json::from_reader(input)?;
    if file.version != CHECKPOINT_VERSION {
        return Err(AmpError::invalid(format!(
            "unsupported checkpoint version {}",
            file.version
        )));
    }
    let mut store = ParameterStore::new();
    for (name, tensor) in file.params {
        if tensor.data.len() != tensor.rows * tensor.cols {
            return Err(AmpError::contract(format!("checkpoint tensor {name} has inconsistent shape")));
        }
        store.register(&name, tensor)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let mut store = ParameterStore::new();
        let id = store.register("w", Tensor::column(&[1.0, -2.0])).unwrap();
        let before = store.value(id).clone();
        for _ in 0..10 {
            store.adam_step(0.01);
        }
        assert_eq!(store.value(id), &before);
    }

    #[test]
    fn constant_gradient_steps_approach_lr_magnitude() {
        let mut store = ParameterStore::new();
        let id = store.register("w", Tensor::scalar(0.0)).unwrap();
        let lr = 0.01;
        let mut prev = 0.0;
        let mut last_step = 0.0;
        for _ in 0..500 {
            store.accumulate_grad(id, &Tensor::scalar(2.5));
            store.adam_step(lr);
            let cur = store.value(id).item();
            last_step = prev - cur;
            prev = cur;
        }
        // Bias-corrected fixed point: |update| -> lr * sign(g).
        assert!((last_step - lr).abs() < lr * 0.05, "step {last_step}");
    }

    #[test]
    fn quadratic_loss_converges() {
        let mut store = ParameterStore::new();
        let id = store.register("p", Tensor::scalar(5.0)).unwrap();
        let mut loss = f64::INFINITY;
        for _ in 0..2000 {
            let p = store.value(id).item();
            loss = (p - 3.0) * (p - 3.0);
            if loss < 1e-6 {
                break;
            }
            store.accumulate_grad(id, &Tensor::scalar(2.0 * (p - 3.0)));
            store.adam_step(0.01);
        }
        assert!(loss < 1e-6, "final loss {loss}");
    }

    #[test]
    fn clip_caps_global_norm() {
        let mut store = ParameterStore::new();
        let a = store.register("a", Tensor::column(&[0.0, 0.0])).unwrap();
        let b = store.register("b", Tensor::scalar(0.0)).unwrap();
        store.accumulate_grad(a, &Tensor::column(&[3.0, 0.0]));
        store.accumulate_grad(b, &Tensor::scalar(4.0));
        assert!((store.grad_norm() - 5.0).abs() < 1e-12);
        store.clip_grad_norm(1.0);
        assert!((store.grad_norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParameterStore::new();
        store.register("w1", Tensor::column(&[1.0, 2.0, 3.0])).unwrap();
        store
            .register("w2", Tensor::new(2, 2, vec![0.5, -0.5, 0.25, 0.0]).unwrap())
            .unwrap();
        let mut buf = Vec::new();
        save_checkpoint(&store, &mut buf).unwrap();
        let back = load_checkpoint(std::io::BufReader::new(&buf[..])).unwrap();
        assert_eq!(back.len(), 2);
        for name in store.names() {
            let id_a = store.id_of(name).unwrap();
            let id_b = back.id_of(name).unwrap();
            assert_eq!(store.value(id_a), back.value(id_b));
        }
    }

    #[test]
    fn shape_conflict_on_reregister() {
        let mut store = ParameterStore::new();
        store.register("w", Tensor::scalar(1.0)).unwrap();
        assert!(store.register("w", Tensor::column(&[1.0, 2.0])).is_err());
    }
}
