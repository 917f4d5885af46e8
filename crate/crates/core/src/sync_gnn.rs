//! Reference synchronous GNN executor.
//!
//! The model per layer: sum the neighbors' states (self excluded), apply a
//! linear map, then ReLU. This is the oracle the asynchronous synchronizer is
//! checked against, and the baseline used to certify that the expressiveness
//! datasets are genuinely hard for standard message passing.

use crate::error::{AmpError, Result};
use crate::graph::Graph;
use serde::{Deserialize, Serialize};

/// One layer's linear map: a square `d x d` matrix plus bias (default zero).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub dim: usize,
    /// Row-major `dim x dim`.
    pub matrix: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerWeights {
    pub fn new(dim: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != dim * dim {
            return Err(AmpError::contract(format!(
                "layer matrix has {} entries, expected {}",
                matrix.len(),
                dim * dim
            )));
        }
        if matrix.iter().any(|x| !x.is_finite()) {
            return Err(AmpError::contract("layer matrix must be finite".to_string()));
        }
        Ok(LayerWeights {
            dim,
            matrix,
            bias: vec![0.0; dim],
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        LayerWeights {
            dim,
            matrix,
            bias: vec![0.0; dim],
        }
    }

    pub fn random(dim: usize, rng: &mut impl rand::Rng) -> Self {
        let matrix = (0..dim * dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
        LayerWeights {
            dim,
            matrix,
            bias: vec![0.0; dim],
        }
    }

    /// `ReLU(W x + b)`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.dim);
        (0..self.dim)
            .map(|i| {
                let row = &self.matrix[i * self.dim..(i + 1) * self.dim];
                let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[i];
                z.max(0.0)
            })
            .collect()
    }
}

/// A stack of layers of equal width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncGnn {
    pub layers: Vec<LayerWeights>,
    pub dim: usize,
}

impl SyncGnn {
    pub fn new(layers: Vec<LayerWeights>) -> Result<Self> {
        let dim = layers.first().map_or(0, |l| l.dim);
        if layers.iter().any(|l| l.dim != dim) {
            return Err(AmpError::contract("all layers must share one width".to_string()));
        }
        Ok(SyncGnn { layers, dim })
    }

    pub fn random(dim: usize, n_layers: usize, seed: u64) -> Self {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        SyncGnn {
            layers: (0..n_layers).map(|_| LayerWeights::random(dim, &mut rng)).collect(),
            dim,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }
}

/// Runs the synchronous model: `h0 = x`, then per layer
/// `h_{l+1}(v) = ReLU(W_l * sum_{u in N(v)} h_l(u) + b_l)`. Returns `h_L`.
pub fn forward(g: &Graph, model: &SyncGnn) -> Result<Vec<Vec<f64>>> {
    if model.depth() > 0 && g.feature_width() != model.dim {
        return Err(AmpError::contract(format!(
            "feature width {} != model width {}",
            g.feature_width(),
            model.dim
        )));
    }
    let mut h: Vec<Vec<f64>> = (0..g.n()).map(|v| g.features(v).to_vec()).collect();
    for layer in &model.layers {
        h = (0..g.n())
            .map(|v| {
                let mut sum = vec![0.0; model.dim];
                for &u in g.neighbors(v) {
                    for (s, x) in sum.iter_mut().zip(&h[u]) {
                        *s += x;
                    }
                }
                layer.apply(&sum)
            })
            .collect();
    }
    Ok(h)
}
