//! Exact realization of the synchronizer's reduced transition as a 3-layer
//! ReLU network.
//!
//! The reduced transition maps `(s, m, safe, u)` to
//!
//! ```text
//!   s                     if safe = 1
//!   ReLU(W(s + m) + b)    if u = 0
//!   s + m                 otherwise
//! ```
//!
//! The construction: layer 1 splits every real entry into a positive/negative
//! pair (so identity survives ReLU) and adds the bit complements plus the
//! `u = 0` / `u > 0` indicator units. Layer 2 holds one component block per
//! case, each wired to the disabling indicators with a large negative penalty:
//! if a disabling unit is nonzero, the whole block's pre-activation drops
//! below zero and ReLU erases it. Layer 3 linearly recombines the blocks.
//! The penalty exceeds any in-domain pre-activation, so inactive blocks are
//! exactly zero, not just small.

use crate::error::{AmpError, Result};
use crate::sync_gnn::LayerWeights;

/// Dense affine layer stack with ReLU between layers and a linear output.
#[derive(Debug, Clone)]
pub struct ReluMlp {
    layers: Vec<(Matrix, Vec<f64>)>,
}

#[derive(Debug, Clone)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    fn zero(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    fn apply(&self, x: &[f64], bias: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + bias[r]
            })
            .collect()
    }
}

impl ReluMlp {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Evaluates all layers; ReLU after every layer except the last.
    pub fn eval_layers(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut z = w.apply(&x, b);
            if i + 1 < self.layers.len() {
                for v in &mut z {
                    *v = v.max(0.0);
                }
            }
            x = z.clone();
            acts.push(z);
        }
        acts
    }

    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        self.eval_layers(input).pop().unwrap_or_default()
    }
}

/// Which case of the reduced transition applies.
pub fn reduced_branch(safe: bool, u: usize) -> usize {
    if safe {
        0
    } else if u == 0 {
        1
    } else {
        2
    }
}

/// Direct evaluation of the reduced transition; the oracle the network is
/// checked against.
pub fn reduced_transition(s: &[f64], m: &[f64], safe: bool, u: usize, weights: &LayerWeights) -> Vec<f64> {
    match reduced_branch(safe, u) {
        0 => s.to_vec(),
        1 => {
            let sum: Vec<f64> = s.iter().zip(m).map(|(a, b)| a + b).collect();
            weights.apply(&sum)
        }
        _ => s.iter().zip(m).map(|(a, b)| a + b).collect(),
    }
}

/// The built network together with its domain contract.
#[derive(Debug, Clone)]
pub struct ExactTransitionMlp {
    pub net: ReluMlp,
    pub dim: usize,
    /// Entries of `s` and `m` must satisfy `|x| <= bound`.
    pub bound: f64,
    /// Count `u` must not exceed this.
    pub max_count: usize,
    pub penalty: f64,
}

impl ExactTransitionMlp {
    /// Input encoding: `[s, m, safe, u]`, width `2 dim + 2`.
    pub fn encode(&self, s: &[f64], m: &[f64], safe: bool, u: usize) -> Vec<f64> {
        let mut x = Vec::with_capacity(2 * self.dim + 2);
        x.extend_from_slice(s);
        x.extend_from_slice(m);
        x.push(if safe { 1.0 } else { 0.0 });
        x.push(u as f64);
        x
    }

    fn check_domain(&self, s: &[f64], m: &[f64], u: usize) -> Result<()> {
        if s.len() != self.dim || m.len() != self.dim {
            return Err(AmpError::contract(format!(
                "state/message width must be {}, got {}/{}",
                self.dim,
                s.len(),
                m.len()
            )));
        }
        if s.iter().chain(m).any(|x| x.abs() > self.bound) {
            return Err(AmpError::invalid(format!(
                "input exceeds the documented bound {}",
                self.bound
            )));
        }
        if u > self.max_count {
            return Err(AmpError::invalid(format!("count u={} exceeds max {}", u, self.max_count)));
        }
        Ok(())
    }

    pub fn eval(&self, s: &[f64], m: &[f64], safe: bool, u: usize) -> Result<Vec<f64>> {
        self.check_domain(s, m, u)?;
        Ok(self.net.eval(&self.encode(s, m, safe, u)))
    }

    /// Full activations, for branch-selection checks: the middle layer holds
    /// the five component blocks `[keep+, keep-, update, add+, add-]` of
    /// width `dim` each.
    pub fn eval_with_activations(&self, s: &[f64], m: &[f64], safe: bool, u: usize) -> Result<Vec<Vec<f64>>> {
        self.check_domain(s, m, u)?;
        Ok(self.net.eval_layers(&self.encode(s, m, safe, u)))
    }
}

/// Builds the network for transition weights `weights` over states and
/// messages bounded by `bound` and counts bounded by `max_count`.
pub fn build_exact_transition_mlp(weights: &LayerWeights, bound: f64, max_count: usize) -> Result<ExactTransitionMlp> {
    if !(bound.is_finite() && bound > 0.0) {
        return Err(AmpError::invalid("bound must be positive and finite".to_string()));
    }
    let d = weights.dim;
    let max_row: f64 = (0..d)
        .map(|i| weights.matrix[i * d..(i + 1) * d].iter().map(|w| w.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let max_bias = weights.bias.iter().map(|b| b.abs()).fold(0.0, f64::max);
    // Strictly dominates every in-domain pre-activation of a gated unit.
    let penalty = 4.0 * (max_row + 1.0) * (2.0 * bound + 1.0) + max_bias + 1.0;

    // Layer 1: positive/negative splits, bit complement, count indicators.
    // Output layout: [s+ (d), s- (d), m+ (d), m- (d), safe, not_safe, u_is0, u_pos].
    let in_width = 2 * d + 2;
    let h1_width = 4 * d + 4;
    let mut w1 = Matrix::zero(h1_width, in_width);
    let mut b1 = vec![0.0; h1_width];
    for i in 0..d {
        w1.set(i, i, 1.0); // s+
        w1.set(d + i, i, -1.0); // s-
        w1.set(2 * d + i, d + i, 1.0); // m+
        w1.set(3 * d + i, d + i, -1.0); // m-
    }
    let col_safe = 2 * d;
    let col_u = 2 * d + 1;
    w1.set(4 * d, col_safe, 1.0); // safe
    w1.set(4 * d + 1, col_safe, -1.0); // not_safe = 1 - safe
    b1[4 * d + 1] = 1.0;
    w1.set(4 * d + 2, col_u, -1.0); // u_is0 = ReLU(1 - u)
    b1[4 * d + 2] = 1.0;
    w1.set(4 * d + 3, col_u, 1.0); // u_pos = u (>= 1 iff u > 0)

    // Layer 2: gated component blocks.
    // Output layout: [keep+ (d), keep- (d), update (d), add+ (d), add- (d)].
    let h2_width = 5 * d;
    let mut w2 = Matrix::zero(h2_width, h1_width);
    let mut b2 = vec![0.0; h2_width];
    let u_safe = 4 * d;
    let u_not_safe = 4 * d + 1;
    let u_is0 = 4 * d + 2;
    let u_pos = 4 * d + 3;
    for i in 0..d {
        // keep: s, disabled unless safe = 1.
        w2.set(i, i, 1.0);
        w2.set(i, u_not_safe, -penalty);
        w2.set(d + i, d + i, 1.0);
        w2.set(d + i, u_not_safe, -penalty);
        // update: ReLU(W(s + m) + b), disabled when safe = 1 or u > 0.
        for j in 0..d {
            let wij = weights.matrix[i * d + j];
            w2.set(2 * d + i, j, wij);
            w2.set(2 * d + i, d + j, -wij);
            w2.set(2 * d + i, 2 * d + j, wij);
            w2.set(2 * d + i, 3 * d + j, -wij);
        }
        b2[2 * d + i] = weights.bias[i];
        w2.set(2 * d + i, u_safe, -penalty);
        w2.set(2 * d + i, u_pos, -penalty);
        // add: s + m, disabled when safe = 1 or u = 0.
        w2.set(3 * d + i, i, 1.0);
        w2.set(3 * d + i, d + i, -1.0);
        w2.set(3 * d + i, 2 * d + i, 1.0);
        w2.set(3 * d + i, 3 * d + i, -1.0);
        w2.set(3 * d + i, u_safe, -penalty);
        w2.set(3 * d + i, u_is0, -penalty);
        w2.set(4 * d + i, i, -1.0);
        w2.set(4 * d + i, d + i, 1.0);
        w2.set(4 * d + i, 2 * d + i, -1.0);
        w2.set(4 * d + i, 3 * d + i, 1.0);
        w2.set(4 * d + i, u_safe, -penalty);
        w2.set(4 * d + i, u_is0, -penalty);
    }

    // Layer 3: recombine blocks linearly.
    let mut w3 = Matrix::zero(d, h2_width);
    let b3 = vec![0.0; d];
    for i in 0..d {
        w3.set(i, i, 1.0);
        w3.set(i, d + i, -1.0);
        w3.set(i, 2 * d + i, 1.0);
        w3.set(i, 3 * d + i, 1.0);
        w3.set(i, 4 * d + i, -1.0);
    }

    Ok(ExactTransitionMlp {
        net: ReluMlp {
            layers: vec![(w1, b1), (w2, b2), (w3, b3)],
        },
        dim: d,
        bound,
        max_count,
        penalty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_weights(d: usize, seed: u64) -> LayerWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut w = LayerWeights::random(d, &mut rng);
        for b in &mut w.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
        w
    }

    #[test]
    fn safe_branch_returns_state() {
        let w = sample_weights(3, 1);
        let mlp = build_exact_transition_mlp(&w, 10.0, 8).unwrap();
        let s = vec![1.5, -2.0, 0.0];
        let m = vec![4.0, 4.0, -4.0];
        let out = mlp.eval(&s, &m, true, 3).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn update_branch_applies_layer() {
        let w = sample_weights(2, 2);
        let mlp = build_exact_transition_mlp(&w, 5.0, 8).unwrap();
        let s = vec![0.5, -1.0];
        let m = vec![2.0, 3.0];
        let out = mlp.eval(&s, &m, false, 0).unwrap();
        let expect = reduced_transition(&s, &m, false, 0, &w);
        for (a, b) in out.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn add_branch_is_exact() {
        let w = sample_weights(2, 3);
        let mlp = build_exact_transition_mlp(&w, 5.0, 8).unwrap();
        let s = vec![-0.75, 3.5];
        let m = vec![1.25, -4.5];
        let out = mlp.eval(&s, &m, false, 4).unwrap();
        assert_eq!(out, vec![-0.75 + 1.25, 3.5 - 4.5]);
    }

    #[test]
    fn out_of_domain_is_rejected() {
        let w = sample_weights(2, 4);
        let mlp = build_exact_transition_mlp(&w, 1.0, 4).unwrap();
        assert!(mlp.eval(&[2.0, 0.0], &[0.0, 0.0], false, 0).is_err());
        assert!(mlp.eval(&[0.5, 0.0], &[0.0, 0.0], false, 5).is_err());
    }

    #[test]
    fn randomized_agreement_with_direct_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..500 {
            let d = 1 + case % 4;
            let w = sample_weights(d, 1000 + case as u64);
            let bound = 6.0;
            let mlp = build_exact_transition_mlp(&w, bound, 6).unwrap();
            let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
            let m: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
            let safe = rng.gen_bool(1.0 / 3.0);
            let u = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..=6) };

            let direct = reduced_transition(&s, &m, safe, u, &w);
            let acts = mlp.eval_with_activations(&s, &m, safe, u).unwrap();
            let out = &acts[2];
            for (a, b) in out.iter().zip(&direct) {
                assert!((a - b).abs() < 1e-12, "value mismatch: {a} vs {b}");
            }

            // Branch selection must be exact: inactive blocks identically zero.
            let h2 = &acts[1];
            let branch = reduced_branch(safe, u);
            let blocks: [&[usize]; 3] = [&[0, 1], &[2], &[3, 4]];
            for (which, cols) in blocks.iter().enumerate() {
                if which == branch {
                    continue;
                }
                for &blk in cols.iter() {
                    for i in 0..d {
                        assert_eq!(h2[blk * d + i], 0.0, "inactive block {blk} leaked");
                    }
                }
            }
        }
    }
}
