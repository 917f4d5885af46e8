//! Task definitions, experiment schedules, and the long-range diagnostics.
//!
//! Every experiment is reproducible from its config: all randomness is
//! seeded, training uses constant delays, and reruns produce bit-identical
//! metrics.

use crate::error::{AmpError, Result};
use crate::generate;
use crate::graph::{bfs_distances, DatasetInstance, NodeId};
use crate::model::{AmpModel, ModelConfigFile};
use crate::sync_gnn::{forward, SyncGnn};
use crate::train::{evaluate, train, NodePrediction, RunProtocol, Task, TrainConfig};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;

/// Reproducible experiment description (the JSON config the CLI consumes).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: String,
    pub model: ModelConfigFile,
    pub seeds: Vec<u64>,
    pub train_size: usize,
    pub train_graphs: usize,
    pub test_sizes: Vec<usize>,
    pub test_graphs_per_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    /// Deliveries per node for non-halting cells.
    pub budget_factor: u64,
    /// Safety cap per node for self-terminating cells.
    pub cap_factor: u64,
}

impl ExperimentConfig {
    /// The §-free default schedule for the shortest-path-parity experiment:
    /// train on 25 graphs of 10 nodes for 1000 iterations at lr 0.01.
    pub fn parity(model: ModelConfigFile, seeds: Vec<u64>, test_sizes: Vec<usize>) -> Self {
        ExperimentConfig {
            task: "parity".to_string(),
            model,
            seeds,
            train_size: 10,
            train_graphs: 25,
            test_sizes,
            test_graphs_per_size: 20,
            iterations: 1000,
            learning_rate: 0.01,
            budget_factor: 10,
            cap_factor: 50,
        }
    }
}

/// Parity instances for one (size, purpose) cell; training and test pools draw
/// from disjoint seed ranges.
pub fn parity_instances(n: usize, count: usize, seed_base: u64) -> Result<Vec<DatasetInstance>> {
    (0..count)
        .map(|i| generate::parity_instance(n, seed_base + i as u64))
        .collect()
}

fn parity_protocol(cfg: &ExperimentConfig) -> RunProtocol {
    RunProtocol::MarkedStarts {
        budget_factor: cfg.budget_factor,
        cap_factor: cfg.cap_factor,
    }
}

/// Train-split parity task for a given experiment seed.
pub fn parity_train_task(cfg: &ExperimentConfig, seed: u64) -> Result<Task> {
    Ok(Task::single(
        parity_instances(cfg.train_size, cfg.train_graphs, seed.wrapping_mul(1000) + 1)?,
        parity_protocol(cfg),
        2,
    ))
}

/// Test-split parity task: seeds disjoint from every training pool.
pub fn parity_test_task(cfg: &ExperimentConfig, size: usize, seed: u64) -> Result<Task> {
    let base = 0x5eed_0000 + seed.wrapping_mul(7919) + size as u64 * 101;
    Ok(Task::single(
        parity_instances(size, cfg.test_graphs_per_size, base)?,
        parity_protocol(cfg),
        2,
    ))
}

/// Accuracy over one distance bucket (label pairs 0-1, 2-3, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketAccuracy {
    pub label: String,
    pub correct: usize,
    pub total: usize,
}

impl BucketAccuracy {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total.max(1) as f64
    }
}

/// Distances from the marked start per (instance, node), the key the
/// diagnostics bucket by.
pub fn start_distances(task: &Task) -> Result<Vec<Vec<usize>>> {
    task.instances
        .iter()
        .map(|inst| {
            let start = inst
                .start_marks
                .as_ref()
                .and_then(|s| s.first().copied())
                .ok_or_else(|| AmpError::contract("distance breakdown needs a marked start".to_string()))?;
            Ok(bfs_distances(&inst.graph, start)?
                .into_iter()
                .map(|d| d.expect("parity graphs are connected"))
                .collect())
        })
        .collect()
}

/// Accuracy by distance to the start, odd and even distances merged into one
/// bucket (the label flips every hop): rows 0-1, 2-3, and so on.
pub fn underreaching_breakdown(records: &[NodePrediction], distances: &[Vec<usize>]) -> Vec<BucketAccuracy> {
    let mut buckets: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for r in records {
        let d = distances[r.instance][r.node];
        let entry = buckets.entry(d / 2).or_insert((0, 0));
        entry.1 += 1;
        entry.0 += usize::from(r.predicted == r.label);
    }
    buckets
        .into_iter()
        .map(|(pair, (correct, total))| BucketAccuracy {
            label: format!("{}-{}", 2 * pair, 2 * pair + 1),
            correct,
            total,
        })
        .collect()
}

/// Accuracy restricted to nodes whose distance to the start was seen during
/// training.
pub fn oversmoothing_restricted(
    records: &[NodePrediction],
    distances: &[Vec<usize>],
    train_max_distance: usize,
) -> BucketAccuracy {
    let mut correct = 0;
    let mut total = 0;
    for r in records {
        if distances[r.instance][r.node] <= train_max_distance {
            total += 1;
            correct += usize::from(r.predicted == r.label);
        }
    }
    BucketAccuracy {
        label: format!("dist<={train_max_distance}"),
        correct,
        total,
    }
}

/// Per-size evaluation of one trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeEval {
    pub size: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
    pub buckets: Vec<BucketAccuracy>,
    pub restricted: BucketAccuracy,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub iterations_run: usize,
    pub per_size: Vec<SizeEval>,
}

/// Mean and standard deviation over seeds, per test size.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: usize,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub per_seed: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub config: ExperimentConfig,
    pub seeds: Vec<SeedOutcome>,
    pub summary: Vec<SizeSummary>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len().max(1) as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.is_empty() {
        return f64::NAN;
    }
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

/// Evaluates a trained model on one test size and produces the diagnostics.
pub fn evaluate_parity_size(
    model: &AmpModel,
    cfg: &ExperimentConfig,
    size: usize,
    seed: u64,
    train_max_distance: usize,
) -> Result<SizeEval> {
    let task = parity_test_task(cfg, size, seed)?;
    let outcome = evaluate(model, &task)?;
    let distances = start_distances(&task)?;
    let buckets = underreaching_breakdown(&outcome.records, &distances);
    let restricted = oversmoothing_restricted(&outcome.records, &distances, train_max_distance);
    Ok(SizeEval {
        size,
        correct: outcome.correct,
        total: outcome.total,
        accuracy: outcome.accuracy,
        buckets,
        restricted,
    })
}

/// Runs the full parity experiment: per seed, train then evaluate every size.
pub fn run_parity_experiment(cfg: &ExperimentConfig) -> Result<MetricsReport> {
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        seeds.push(run_parity_seed(cfg, seed)?);
    }
    Ok(summarize(cfg.clone(), seeds))
}

/// One seed of the parity experiment; split out so callers can parallelize.
pub fn run_parity_seed(cfg: &ExperimentConfig, seed: u64) -> Result<SeedOutcome> {
    let mut model_cfg = cfg.model.clone();
    model_cfg.seed = seed;
    let mut model = model_cfg.build(1, 2)?;
    let train_task = parity_train_task(cfg, seed)?;
    let train_cfg = TrainConfig {
        iterations: cfg.iterations,
        learning_rate: cfg.learning_rate,
        ..TrainConfig::default()
    };
    let history = train(&mut model, &train_task, &train_cfg)?;
    let last = history.last().expect("at least one iteration");

    let train_max_distance = start_distances(&train_task)?
        .iter()
        .flat_map(|d| d.iter().copied())
        .max()
        .unwrap_or(0);

    let mut per_size = Vec::with_capacity(cfg.test_sizes.len());
    for &size in &cfg.test_sizes {
        per_size.push(evaluate_parity_size(&model, cfg, size, seed, train_max_distance)?);
    }
    Ok(SeedOutcome {
        seed,
        final_train_loss: last.loss,
        final_train_accuracy: last.accuracy,
        iterations_run: history.len(),
        per_size,
    })
}

/// Aggregates per-seed outcomes into the cross-seed summary.
pub fn summarize(config: ExperimentConfig, seeds: Vec<SeedOutcome>) -> MetricsReport {
    let summary = config
        .test_sizes
        .iter()
        .map(|&size| {
            let per_seed: Vec<f64> = seeds
                .iter()
                .filter_map(|s| s.per_size.iter().find(|e| e.size == size).map(|e| e.accuracy))
                .collect();
            let (mean, std) = mean_std(&per_seed);
            SizeSummary {
                size,
                mean,
                std,
                median: median(&per_seed),
                per_seed,
            }
        })
        .collect();
    MetricsReport {
        config,
        seeds,
        summary,
    }
}

/// CSV rows: one per seed x size x metric, plus the per-bucket diagnostics.
pub fn write_metrics_csv(report: &MetricsReport, mut out: impl Write) -> Result<()> {
    writeln!(out, "seed,size,metric,value")?;
    for seed in &report.seeds {
        writeln!(out, "{},,train_loss,{}", seed.seed, seed.final_train_loss)?;
        writeln!(out, "{},,train_accuracy,{}", seed.seed, seed.final_train_accuracy)?;
        for eval in &seed.per_size {
            writeln!(out, "{},{},accuracy,{}", seed.seed, eval.size, eval.accuracy)?;
            writeln!(
                out,
                "{},{},restricted_accuracy,{}",
                seed.seed,
                eval.size,
                eval.restricted.accuracy()
            )?;
            for b in &eval.buckets {
                writeln!(
                    out,
                    "{},{},bucket_{}_accuracy,{}",
                    seed.seed,
                    eval.size,
                    b.label,
                    b.accuracy()
                )?;
            }
        }
    }
    Ok(())
}

/// Paired single-task vs. multi-task (three simultaneous starts) accuracies.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OversquashingReport {
    pub tasks: usize,
    pub graph_size: usize,
    pub single_task_accuracy: f64,
    pub multi_task_accuracy: f64,
}

/// Trains one model per condition (k = 1 and k = `tasks`) on fresh graphs and
/// reports both accuracies. Node labels are the per-start parity bits.
pub fn oversquashing_multitask(
    model: &ModelConfigFile,
    tasks: usize,
    graph_size: usize,
    graphs: usize,
    iterations: usize,
    seed: u64,
) -> Result<OversquashingReport> {
    if tasks < 1 {
        return Err(AmpError::invalid("need at least one task".to_string()));
    }
    if graph_size < tasks {
        return Err(AmpError::invalid(format!(
            "graphs of {graph_size} nodes cannot host {tasks} distinct starts"
        )));
    }
    let train_cfg = TrainConfig {
        iterations,
        ..TrainConfig::default()
    };

    let build_task = |k: usize, seed_base: u64| -> Result<Task> {
        let mut instances = Vec::with_capacity(graphs);
        let mut labels = Vec::with_capacity(graphs);
        for i in 0..graphs {
            let (inst, l) = generate::multi_parity_instance(graph_size, k, seed_base + i as u64)?;
            instances.push(inst);
            labels.push(l);
        }
        Ok(Task {
            instances,
            protocol: RunProtocol::MarkedStarts {
                budget_factor: 10,
                cap_factor: 50,
            },
            classes: 2,
            heads: k,
            multi_labels: Some(labels),
        })
    };

    let mut accuracies = Vec::with_capacity(2);
    for k in [1, tasks] {
        let task = build_task(k, seed.wrapping_mul(31) + k as u64 * 1000)?;
        let mut cfg = model.clone();
        cfg.seed = seed;
        let mut m = cfg.build(1, 2 * k)?;
        train(&mut m, &task, &train_cfg)?;
        let eval_task = build_task(k, 0xbeef + seed.wrapping_mul(17) + k as u64 * 2000)?;
        accuracies.push(evaluate(&m, &eval_task)?.accuracy);
    }
    Ok(OversquashingReport {
        tasks,
        graph_size,
        single_task_accuracy: accuracies[0],
        multi_task_accuracy: accuracies[1],
    })
}

/// Certifies that the synchronous baseline with random weights cannot
/// separate a 1-WL-equivalent pair: identical output multisets on both
/// graphs over several weight draws. Weights are drawn positive so the ReLU
/// cannot zero out whole layers and blunt the check; 1-WL-equal pairs stay
/// equal under any weights.
pub fn certify_baseline_blind(a: &crate::graph::Graph, b: &crate::graph::Graph, trials: u64) -> Result<bool> {
    use rand::{Rng, SeedableRng};
    for t in 0..trials {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xab5e + t);
        let d = a.feature_width();
        let layers = (0..3)
            .map(|_| {
                crate::sync_gnn::LayerWeights::new(d, (0..d * d).map(|_| rng.gen_range(0.1..1.0)).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let model = SyncGnn::new(layers)?;
        let ha = forward(a, &model)?;
        let hb = forward(b, &model)?;
        let key = |h: &Vec<Vec<f64>>| {
            let mut rows: Vec<Vec<u64>> = h
                .iter()
                .map(|row| row.iter().map(|x| x.to_bits()).collect())
                .collect();
            rows.sort();
            rows
        };
        if key(&ha) != key(&hb) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// A tiny two-class graph-classification set in the standard text layout:
/// cycles (class 0) versus cliques-with-a-tail (class 1). Stands in for a
/// small molecule dataset when none is available on disk.
pub fn make_graph_classification_fixture(dir: impl AsRef<std::path::Path>, graphs: usize, seed: u64) -> Result<Vec<DatasetInstance>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut instances = Vec::with_capacity(graphs);
    for i in 0..graphs {
        let class = i % 2;
        let n = rng.gen_range(6..=9);
        let graph = if class == 0 {
            let edges: Vec<(NodeId, NodeId)> = (0..n).map(|v| (v, (v + 1) % n)).collect();
            crate::graph::Graph::from_edges_unit(n, &edges)?
        } else {
            // K4 plus a path tail.
            let mut edges = vec![(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
            for v in 4..n {
                edges.push((v - 1, v));
            }
            crate::graph::Graph::from_edges_unit(n, &edges)?
        };
        instances.push(DatasetInstance {
            graph: graph.with_graph_label(class),
            task_kind: crate::graph::TaskKind::GraphClassification,
            start_marks: None,
        });
    }
    crate::tu::write_tu_dataset(dir, "FIXTURE", &instances)?;
    Ok(instances)
}
