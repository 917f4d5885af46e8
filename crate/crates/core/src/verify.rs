//! Shared verification suites behind the CLI's verify commands and the
//! acceptance tests: simulation-vs-reference equivalence and the exact
//! network-vs-rule equivalence.

use crate::engine::DelayModel;
use crate::error::Result;
use crate::exact_mlp::{build_exact_transition_mlp, reduced_branch, reduced_transition};
use crate::generate::random_connected_graph;
use crate::sync_gnn::{forward, LayerWeights, SyncGnn};
use crate::synchronizer::{simulate, OriginMode};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimVerification {
    pub graphs: usize,
    pub max_n: usize,
    pub layers: usize,
    pub seed: u64,
    /// Worst per-entry deviation from the synchronous reference across both
    /// delay models.
    pub max_deviation: f64,
    pub tolerance: f64,
}

impl SimVerification {
    pub fn passed(&self) -> bool {
        self.max_deviation < self.tolerance
    }
}

/// Simulates random connected graphs (degree cap 5, feature width 2) under
/// constant and uniform delays and compares every node's output against the
/// synchronous reference.
pub fn verify_simulation(graphs: usize, max_n: usize, layers: usize, seed: u64) -> Result<SimVerification> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_deviation = 0.0f64;
    for case in 0..graphs {
        let n = 4 + case % max_n.saturating_sub(3).max(1);
        let depth = 1 + case % layers.max(1);
        let g = random_connected_graph(n, 2, 5, rng.gen())?;
        let model = SyncGnn::random(2, depth, rng.gen());
        let oracle = forward(&g, &model)?;
        let start = case % n;

        let constant = simulate(&g, &model, start, DelayModel::Constant(1.0), OriginMode::Corrected)?;
        let uniform = simulate(&g, &model, start, DelayModel::uniform_unit(rng.gen()), OriginMode::Corrected)?;
        for states in [&constant, &uniform] {
            for (o, s) in oracle.iter().zip(states.iter()) {
                for (a, b) in o.iter().zip(s) {
                    max_deviation = max_deviation.max((a - b).abs());
                }
            }
        }
    }
    Ok(SimVerification {
        graphs,
        max_n,
        layers,
        seed,
        max_deviation,
        tolerance: 1e-9,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpVerification {
    pub samples: usize,
    pub seed: u64,
    /// Inputs where an inactive component block was not exactly zero, or the
    /// selected branch disagreed with the rule.
    pub branch_mismatches: usize,
    pub max_value_error: f64,
    pub value_tolerance: f64,
}

impl MlpVerification {
    pub fn passed(&self) -> bool {
        self.branch_mismatches == 0 && self.max_value_error < self.value_tolerance
    }
}

/// Randomized in-domain equivalence between the 3-layer network and the
/// direct reduced transition: branch selection must be exact, values within
/// `1e-12`.
pub fn verify_exact_mlp(samples: usize, seed: u64) -> Result<MlpVerification> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bound = 6.0;
    let max_count = 6;
    let mut branch_mismatches = 0usize;
    let mut max_value_error = 0.0f64;

    for case in 0..samples {
        let d = 1 + case % 4;
        let mut weights = LayerWeights::random(d, &mut rng);
        for b in &mut weights.bias {
            *b = rng.gen_range(-0.5..0.5);
        }
        let mlp = build_exact_transition_mlp(&weights, bound, max_count)?;

        let s: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
        let m: Vec<f64> = (0..d).map(|_| rng.gen_range(-bound..bound)).collect();
        let safe = rng.gen_bool(1.0 / 3.0);
        let u = if rng.gen_bool(0.5) { 0 } else { rng.gen_range(1..=max_count) };

        let direct = reduced_transition(&s, &m, safe, u, &weights);
        let acts = mlp.eval_with_activations(&s, &m, safe, u)?;
        let output = &acts[2];
        for (a, b) in output.iter().zip(&direct) {
            max_value_error = max_value_error.max((a - b).abs());
        }

        // Branch selection: every inactive block must be identically zero.
        let h2 = &acts[1];
        let branch = reduced_branch(safe, u);
        let blocks: [&[usize]; 3] = [&[0, 1], &[2], &[3, 4]];
        let mut clean = true;
        for (which, block_ids) in blocks.iter().enumerate() {
            if which == branch {
                continue;
            }
            for &blk in block_ids.iter() {
                if h2[blk * d..(blk + 1) * d].iter().any(|&v| v != 0.0) {
                    clean = false;
                }
            }
        }
        if !clean {
            branch_mismatches += 1;
        }
    }
    Ok(MlpVerification {
        samples,
        seed,
        branch_mismatches,
        max_value_error,
        value_tolerance: 1e-12,
    })
}
