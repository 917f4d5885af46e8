//! Acceptance suite: every release gate runs here with its tolerance pinned
//! in code. Each test prints one PASS line with the measured numbers.

use amp_core::autodiff::check::gradient_check;
use amp_core::autodiff::{ParameterStore, Tensor};
use amp_core::bench::{self, ExperimentConfig};
use amp_core::engine::{self, DelayModel, Emission, Message, NodeProgram, ProtocolBits, RunConfig, Step};
use amp_core::generate;
use amp_core::graph::{DatasetInstance, Graph, NodeId, TaskKind};
use amp_core::idassign;
use amp_core::model::{AmpCellConfig, AmpModel, CellKind, HaltingKind, ModelConfigFile};
use amp_core::train::{evaluate, train, RunProtocol, Task, TrainConfig};
use amp_core::{tu, verify};
use std::time::Instant;

#[test]
fn criterion_1_simulation_equivalence() {
    let t0 = Instant::now();
    let report = verify::verify_simulation(50, 12, 3, 1).unwrap();
    assert!(
        report.passed(),
        "simulation deviates from the synchronous reference by {:.3e}",
        report.max_deviation
    );
    assert!(t0.elapsed().as_secs() < 30, "took {:?}", t0.elapsed());
    println!(
        "[PASS] criterion 1: simulation equivalence — 50 graphs, both delay models, max deviation {:.3e} < 1e-9 ({:?})",
        report.max_deviation,
        t0.elapsed()
    );
}

#[test]
fn criterion_2_exact_network_construction() {
    let t0 = Instant::now();
    let report = verify::verify_exact_mlp(10_000, 2).unwrap();
    assert_eq!(report.branch_mismatches, 0, "branch selection must be exact");
    assert!(
        report.max_value_error < 1e-12,
        "max value error {:.3e}",
        report.max_value_error
    );
    assert!(t0.elapsed().as_secs() < 10, "took {:?}", t0.elapsed());
    println!(
        "[PASS] criterion 2: exact 3-layer network — 10000 inputs, 0 branch mismatches, max value error {:.3e} < 1e-12 ({:?})",
        report.max_value_error,
        t0.elapsed()
    );
}

#[test]
fn criterion_3_id_protocol_monte_carlo() {
    let t0 = Instant::now();
    let mut mean_attempts_k2 = 0.0;
    for k in 1..=6 {
        let report = idassign::monte_carlo_star(k, 1000, 40 + k as u64).unwrap();
        assert_eq!(
            report.uniqueness_failures, 0,
            "k={k}: {} uniqueness/completeness failures",
            report.uniqueness_failures
        );
        if k == 2 {
            mean_attempts_k2 = report.mean_attempts;
        }
    }

    let p = idassign::surrender_probability_estimate(100_000, 77);
    assert!(
        (p - 1.0 / 6.0).abs() < 0.01,
        "surrender probability estimate {p} not within 1/6 +- 0.01"
    );

    // Attempt counts for k = 2 follow the geometric(1/6) analysis: the mean
    // must sit within 10% of 6.
    assert!(
        (mean_attempts_k2 - 6.0).abs() <= 0.6,
        "mean attempts for k=2 was {mean_attempts_k2}, not within 10% of 6"
    );
    assert!(t0.elapsed().as_secs() < 120, "took {:?}", t0.elapsed());
    println!(
        "[PASS] criterion 3: id protocol — 6x1000 runs, 0 failures, surrender estimate {:.4} (1/6 = {:.4}), k=2 mean attempts {:.2} ({:?})",
        p,
        1.0 / 6.0,
        mean_attempts_k2,
        t0.elapsed()
    );
}

#[derive(Clone)]
struct Echo {
    fill: f64,
}

impl NodeProgram for Echo {
    type State = u64;

    fn payload_width(&self) -> usize {
        2
    }

    fn init_state(&mut self, _g: &Graph, _v: NodeId) -> u64 {
        0
    }

    fn on_message(
        &mut self,
        _g: &Graph,
        _v: NodeId,
        state: &u64,
        _msg: &Message,
    ) -> amp_core::error::Result<Step<u64>> {
        Ok(Step::emit(
            state + 1,
            Emission::new(vec![self.fill, -self.fill], ProtocolBits::NONE),
        ))
    }
}

#[test]
fn criterion_4_engine_determinism() {
    let t0 = Instant::now();

    // Byte-identical traces for a fixed config run twice.
    let g = generate::random_connected_graph(9, 2, 5, 11).unwrap();
    let model = amp_core::sync_gnn::SyncGnn::random(2, 3, 12);
    let cfg = RunConfig::new(0, Some(100_000), DelayModel::uniform_unit(13)).with_trace();
    let dump = || {
        let mut program = amp_core::synchronizer::RoundSynchronizer::new(model.clone());
        let out = engine::run(&g, &mut program, &cfg).unwrap();
        let mut buf = Vec::new();
        out.trace.unwrap().write_jsonl(&mut buf).unwrap();
        buf
    };
    assert_eq!(dump(), dump(), "traces must be byte-identical across reruns");

    // Bit-identical training metrics for a fixed seed.
    let task = Task::single(
        generate::cycle_pair_instances(),
        RunProtocol::PerStart { budget_factor: 5 },
        2,
    );
    let train_once = || {
        let mut m = AmpModel::new(
            AmpCellConfig {
                state_width: 8,
                message_width: 4,
                cell: CellKind::Rnn,
                skip_connection: false,
                halting: HaltingKind::None,
                send_gate: false,
            },
            1,
            2,
            21,
        )
        .unwrap();
        train(&mut m, &task, &TrainConfig { iterations: 4, ..TrainConfig::default() })
            .unwrap()
            .iter()
            .map(|it| it.loss.to_bits())
            .collect::<Vec<_>>()
    };
    assert_eq!(train_once(), train_once(), "training metrics must be bit-identical");

    // Constant-delay delivery order is a function of the emission pattern,
    // not of payload contents.
    let ring = Graph::from_edges_unit(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0)]).unwrap();
    let order_of = |fill: f64| {
        let mut program = Echo { fill };
        let cfg = RunConfig::new(2, Some(60), DelayModel::Constant(0.5)).with_trace();
        let out = engine::run(&ring, &mut program, &cfg).unwrap();
        out.trace
            .unwrap()
            .steps
            .iter()
            .map(|s| (s.message.seq, s.receiver, s.message.sender))
            .collect::<Vec<_>>()
    };
    assert_eq!(order_of(0.25), order_of(-9.75), "delivery order must ignore payloads");

    println!(
        "[PASS] criterion 4: engine determinism — byte-identical traces, bit-identical metrics, payload-independent order ({:?})",
        t0.elapsed()
    );
}

#[test]
fn criterion_5_gradient_correctness() {
    let t0 = Instant::now();
    use amp_core::autodiff::cells::{gru_cell, lstm_cell, rnn_cell, GruParams, LstmParams, RnnParams};
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(31);

    // Primitive chain.
    let mut store = ParameterStore::new();
    store.register("w", Tensor::glorot(5, 5, &mut rng)).unwrap();
    store.register("x", Tensor::glorot(5, 1, &mut rng)).unwrap();
    let rel = gradient_check(&mut store, |tape, store| {
        let w = tape.param(store, store.id_of("w").unwrap());
        let x = tape.param(store, store.id_of("x").unwrap());
        let wx = tape.matmul(w, x)?;
        let a = tape.relu(wx);
        let b = tape.sigmoid(a);
        let c = tape.tanh(b);
        tape.softmax_cross_entropy(c, 3)
    })
    .unwrap();
    assert!(rel < 1e-4, "primitive chain rel err {rel}");

    // Each recurrent cell.
    let mut worst_cell = 0.0f64;
    {
        let mut store = ParameterStore::new();
        let p = RnnParams::register(&mut store, "rnn", 3, 4, &mut rng).unwrap();
        let rel = gradient_check(&mut store, |tape, store| {
            let v = p.vars(tape, store);
            let mut h = tape.leaf(Tensor::zeros(4, 1));
            for _ in 0..3 {
                let x = tape.leaf(Tensor::column(&[0.2, -0.4, 0.6]));
                h = rnn_cell(tape, &v, h, x)?;
            }
            tape.softmax_cross_entropy(h, 0)
        })
        .unwrap();
        worst_cell = worst_cell.max(rel);
    }
    {
        let mut store = ParameterStore::new();
        let p = GruParams::register(&mut store, "gru", 3, 4, &mut rng).unwrap();
        let rel = gradient_check(&mut store, |tape, store| {
            let v = p.vars(tape, store);
            let mut h = tape.leaf(Tensor::zeros(4, 1));
            for _ in 0..3 {
                let x = tape.leaf(Tensor::column(&[0.2, -0.4, 0.6]));
                h = gru_cell(tape, &v, h, x)?;
            }
            tape.softmax_cross_entropy(h, 1)
        })
        .unwrap();
        worst_cell = worst_cell.max(rel);
    }
    {
        let mut store = ParameterStore::new();
        let p = LstmParams::register(&mut store, "lstm", 3, 4, &mut rng).unwrap();
        let rel = gradient_check(&mut store, |tape, store| {
            let v = p.vars(tape, store);
            let mut h = tape.leaf(Tensor::zeros(4, 1));
            let mut c = tape.leaf(Tensor::zeros(4, 1));
            for _ in 0..3 {
                let x = tape.leaf(Tensor::column(&[0.2, -0.4, 0.6]));
                let (h2, c2) = lstm_cell(tape, &v, h, c, x)?;
                h = h2;
                c = c2;
            }
            tape.softmax_cross_entropy(h, 2)
        })
        .unwrap();
        worst_cell = worst_cell.max(rel);
    }
    assert!(worst_cell < 1e-4, "cell rel err {worst_cell}");

    // End to end through the event trace: n = 3, budget 6, widths 2.
    let model = AmpModel::new(
        AmpCellConfig {
            state_width: 2,
            message_width: 2,
            cell: CellKind::Gru,
            skip_connection: true,
            halting: HaltingKind::None,
            send_gate: false,
        },
        1,
        2,
        41,
    )
    .unwrap();
    let g = Graph::from_edges_unit(3, &[(0, 1), (1, 2)])
        .unwrap()
        .with_node_labels(vec![0, 1, 0]);
    let task = Task::single(
        vec![DatasetInstance {
            graph: g,
            task_kind: TaskKind::NodeClassification,
            start_marks: Some(vec![0]),
        }],
        RunProtocol::MarkedStarts {
            budget_factor: 2,
            cap_factor: 2,
        },
        2,
    );
    let loss_of = |store: &ParameterStore, model: &AmpModel| -> f64 {
        let mut program = amp_core::model::AmpProgram::new(model, store);
        let inst = &task.instances[0];
        let cfg = RunConfig {
            starts: inst.start_marks.clone().unwrap(),
            message_budget: Some(6),
            delay: DelayModel::Constant(1.0),
            record_trace: false,
            stop_when_all_halted: false,
        };
        let out = engine::run(&inst.graph, &mut program, &cfg).unwrap();
        let labels = inst.graph.node_labels.as_ref().unwrap();
        let mut total = None;
        for v in 0..3 {
            let logits = program.readout(&out.states[v]).unwrap();
            let l = program.tape.softmax_cross_entropy(logits, labels[v]).unwrap();
            total = Some(match total {
                None => l,
                Some(acc) => program.tape.add(acc, l).unwrap(),
            });
        }
        program.tape.value(total.unwrap()).item()
    };

    // Analytic gradients via one backward pass.
    let mut store = model.store.clone();
    store.zero_grads();
    {
        let mut program = amp_core::model::AmpProgram::new(&model, &store);
        let inst = &task.instances[0];
        let cfg = RunConfig {
            starts: inst.start_marks.clone().unwrap(),
            message_budget: Some(6),
            delay: DelayModel::Constant(1.0),
            record_trace: false,
            stop_when_all_halted: false,
        };
        let out = engine::run(&inst.graph, &mut program, &cfg).unwrap();
        let labels = inst.graph.node_labels.as_ref().unwrap();
        let mut total = None;
        for v in 0..3 {
            let logits = program.readout(&out.states[v]).unwrap();
            let l = program.tape.softmax_cross_entropy(logits, labels[v]).unwrap();
            total = Some(match total {
                None => l,
                Some(acc) => program.tape.add(acc, l).unwrap(),
            });
        }
        let loss = total.unwrap();
        let mut tape = program.into_tape();
        tape.backward(loss, &mut store).unwrap();
    }

    let h = 1e-5;
    let mut worst = 0.0f64;
    for name in store.names().map(String::from).collect::<Vec<_>>() {
        let id = store.id_of(&name).unwrap();
        let analytic = store.grad(id).clone();
        for i in 0..analytic.data.len() {
            store.nudge(id, i, h);
            let plus = loss_of(&store, &model);
            store.nudge(id, i, -2.0 * h);
            let minus = loss_of(&store, &model);
            store.nudge(id, i, h);
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.data[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1.0);
            worst = worst.max(rel);
        }
    }
    assert!(worst < 1e-3, "end-to-end rel err {worst}");

    println!(
        "[PASS] criterion 5: gradients — primitives {rel:.2e}, cells {worst_cell:.2e} (< 1e-4), end-to-end {worst:.2e} (< 1e-3) ({:?})",
        t0.elapsed()
    );
}

#[test]
fn criterion_6_cycle_pair_expressiveness() {
    let t0 = Instant::now();

    // Pre-check: the synchronous baseline cannot separate the pair.
    let (a, b) = generate::generate_cycle_pair();
    assert!(
        bench::certify_baseline_blind(&a, &b, 10).unwrap(),
        "the cycle pair must be invisible to the synchronous baseline"
    );

    let task = Task::single(
        generate::cycle_pair_instances(),
        RunProtocol::PerStart { budget_factor: 5 },
        2,
    );
    let mut train_accs = Vec::new();
    let mut test_accs = Vec::new();
    for seed in [1u64, 2, 3, 4, 5] {
        let mut model = AmpModel::new(
            AmpCellConfig {
                state_width: 16,
                message_width: 10,
                cell: CellKind::Rnn,
                skip_connection: false,
                halting: HaltingKind::None,
                send_gate: false,
            },
            1,
            2,
            seed,
        )
        .unwrap();
        let cfg = TrainConfig {
            iterations: 300,
            learning_rate: 0.01,
            stop_at_accuracy: Some(1.0),
            ..TrainConfig::default()
        };
        let history = train(&mut model, &task, &cfg).unwrap();
        train_accs.push(history.last().unwrap().accuracy);
        test_accs.push(evaluate(&model, &task).unwrap().accuracy);
    }
    let median_train = bench::median(&train_accs);
    let median_test = bench::median(&test_accs);
    assert_eq!(median_train, 1.0, "median train accuracy over 5 seeds (got {train_accs:?})");
    assert_eq!(median_test, 1.0, "median test accuracy over 5 seeds (got {test_accs:?})");
    assert!(t0.elapsed().as_secs() < 300, "took {:?}", t0.elapsed());
    println!(
        "[PASS] criterion 6: cycle-pair — baseline certified blind; median train/test accuracy 1.00/1.00 over 5 seeds ({:?})",
        t0.elapsed()
    );
}

#[test]
fn criterion_7_parity_extrapolation() {
    let t0 = Instant::now();
    let model = ModelConfigFile {
        cell: CellKind::Gru,
        state_width: 30,
        message_width: 10,
        halting: HaltingKind::Iter { epsilon: 0.01 },
        skip_connection: false,
        send_gate: false,
        seed: 0,
    };
    let cfg = ExperimentConfig::parity(model.clone(), vec![1, 2, 3, 4, 5], vec![10, 25, 50]);
    let report = bench::run_parity_experiment(&cfg).unwrap();

    for summary in &report.summary {
        let floor = if summary.size <= 25 { 0.95 } else { 0.90 };
        assert!(
            summary.median >= floor,
            "size {}: median accuracy {:.4} below {floor} (per seed: {:?})",
            summary.size,
            summary.median,
            summary.per_seed
        );
    }

    // Diagnostics are produced and internally consistent: bucket-weighted
    // averages reconstruct the overall accuracy.
    for seed in &report.seeds {
        for eval in &seed.per_size {
            let total: usize = eval.buckets.iter().map(|b| b.total).sum();
            assert_eq!(total, eval.total, "buckets must partition the predictions");
            let weighted: f64 =
                eval.buckets.iter().map(|b| b.accuracy() * b.total as f64).sum::<f64>() / total as f64;
            assert!(
                (weighted - eval.accuracy).abs() < 1e-12,
                "bucket-weighted average {weighted} != overall {}",
                eval.accuracy
            );
            assert!(eval.restricted.total <= eval.total);
        }
    }

    // Oversquashing: the paired single-task vs three-task report.
    let squash = bench::oversquashing_multitask(&model, 3, 12, 8, 60, 1).unwrap();
    assert!(squash.single_task_accuracy.is_finite() && squash.multi_task_accuracy.is_finite());
    assert!(squash.single_task_accuracy > 0.5, "single-task accuracy {}", squash.single_task_accuracy);

    assert!(t0.elapsed().as_secs() < 1800, "took {:?}", t0.elapsed());
    let medians: Vec<(usize, f64)> = report.summary.iter().map(|s| (s.size, s.median)).collect();
    println!(
        "[PASS] criterion 7: parity extrapolation — medians {medians:?} (floors 0.95/0.95/0.90); diagnostics consistent; oversquashing pair {:.3}/{:.3} ({:?})",
        squash.single_task_accuracy,
        squash.multi_task_accuracy,
        t0.elapsed()
    );
}

#[test]
fn criterion_8_graph_classification_smoke() {
    let t0 = Instant::now();

    // Loader round-trips a hand-built fixture exactly (also covered at unit
    // level); the smoke run trains on a small two-class set in the standard
    // text layout. A real molecule dataset can be supplied via
    // AMP_TU_DATASET to run the same check on it.
    let dir = std::env::var_os("AMP_TU_DATASET").map(std::path::PathBuf::from).unwrap_or_else(|| {
        let dir = std::env::temp_dir().join(format!("amp_accept_tu_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        bench::make_graph_classification_fixture(&dir, 20, 8).unwrap();
        dir
    });
    let instances = tu::load_tu_dataset(&dir).unwrap();
    assert!(!instances.is_empty());
    let input_width = instances[0].graph.feature_width();
    let classes = instances.iter().filter_map(|i| i.graph.graph_label).max().unwrap() + 1;

    // One fold: train on the whole fold, require training accuracy >= 0.90
    // with finite, decreasing loss.
    let task = Task::single(instances, RunProtocol::PooledPerStart { run_budget: 15 }, classes);
    let mut model = AmpModel::new(
        AmpCellConfig {
            state_width: 16,
            message_width: 10,
            cell: CellKind::Rnn,
            skip_connection: true,
            halting: HaltingKind::None,
            send_gate: false,
        },
        input_width,
        classes,
        3,
    )
    .unwrap();
    let cfg = TrainConfig {
        iterations: 120,
        stop_at_accuracy: Some(0.95),
        ..TrainConfig::default()
    };
    let history = train(&mut model, &task, &cfg).unwrap();
    let first = history.first().unwrap();
    let last = history.last().unwrap();
    assert!(history.iter().all(|m| m.loss.is_finite()), "loss must stay finite");
    assert!(last.loss < first.loss, "loss must decrease: {} -> {}", first.loss, last.loss);
    assert!(
        last.accuracy >= 0.90,
        "training accuracy {:.3} below 0.90 (loss {:.4})",
        last.accuracy,
        last.loss
    );
    assert!(t0.elapsed().as_secs() < 1800, "took {:?}", t0.elapsed());
    println!(
        "[PASS] criterion 8: graph-classification smoke — {} iterations, loss {:.4} -> {:.4}, training accuracy {:.3} >= 0.90 ({:?})",
        history.len(),
        first.loss,
        last.loss,
        last.accuracy,
        t0.elapsed()
    );
}
