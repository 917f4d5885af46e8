use crate::{CliError, CliResult};
use amp_core::bench::{self, ExperimentConfig};
use amp_core::error::AmpError;
use amp_core::idassign;
use amp_core::model::{AmpModel, ModelConfigFile};
use amp_core::train::{evaluate, train as train_model, RunProtocol, Task, TrainConfig};
use amp_core::{generate, tu, verify};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

fn results_dir(explicit: Option<&Path>) -> PathBuf {
    explicit
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os("AMP_RESULTS_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

pub fn verify_sim(graphs: usize, max_n: usize, layers: usize, seed: u64, jobs: usize) -> CliResult {
    println!("verify-sim: graphs={graphs} max_n={max_n} layers={layers} seed={seed} jobs={jobs}");
    let report = if jobs > 1 {
        // Partition the case budget across workers; deviations combine by max.
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| AmpError::invalid(e.to_string()))?;
        let chunks: Vec<(usize, u64)> = (0..jobs as u64)
            .map(|j| (graphs / jobs + usize::from((j as usize) < graphs % jobs), seed.wrapping_add(j * 7177)))
            .collect();
        let partials: Vec<_> = pool.install(|| {
            use rayon::prelude::*;
            chunks
                .par_iter()
                .map(|&(count, s)| verify::verify_simulation(count, max_n, layers, s))
                .collect()
        });
        let mut merged = verify::SimVerification {
            graphs,
            max_n,
            layers,
            seed,
            max_deviation: 0.0,
            tolerance: 1e-9,
        };
        for p in partials {
            merged.max_deviation = merged.max_deviation.max(p?.max_deviation);
        }
        merged
    } else {
        verify::verify_simulation(graphs, max_n, layers, seed)?
    };
    println!(
        "max deviation {:.3e} over {} graphs (tolerance {:.0e})",
        report.max_deviation, report.graphs, report.tolerance
    );
    if report.passed() {
        println!("verify-sim: PASS");
        Ok(())
    } else {
        Err(CliError::Acceptance(format!(
            "simulation deviates from the synchronous reference by {:.3e}",
            report.max_deviation
        )))
    }
}

pub fn verify_mlp(samples: usize, seed: u64) -> CliResult {
    println!("verify-mlp: samples={samples} seed={seed}");
    let report = verify::verify_exact_mlp(samples, seed)?;
    println!(
        "branch mismatches {} / {}, max value error {:.3e} (tolerance {:.0e})",
        report.branch_mismatches, report.samples, report.max_value_error, report.value_tolerance
    );
    if report.passed() {
        println!("verify-mlp: PASS");
        Ok(())
    } else {
        Err(CliError::Acceptance(format!(
            "{} branch mismatches, max value error {:.3e}",
            report.branch_mismatches, report.max_value_error
        )))
    }
}

pub fn id_assign(k: usize, trials: usize, seed: u64, general: bool, n: Option<usize>) -> CliResult {
    if general {
        let n = n.ok_or_else(|| AmpError::invalid("--general requires --n".to_string()))?;
        println!("id-assign: general graphs n={n} trials={trials} seed={seed}");
        let mut failures = 0usize;
        for trial in 0..trials {
            let g = generate::generate_spanning_tree_graph(n, seed.wrapping_add(trial as u64 * 31))?;
            let ids = idassign::assign_ids_general(&g, seed.wrapping_add(trial as u64))?;
            let mut sorted = ids.clone();
            sorted.sort_unstable();
            if sorted != (0..n).collect::<Vec<_>>() {
                failures += 1;
            }
        }
        let report = serde_json::json!({
            "mode": "general",
            "n": n,
            "trials": trials,
            "uniqueness_failures": failures,
        });
        println!("{}", serde_json::to_string_pretty(&report).map_err(AmpError::from)?);
        if failures > 0 {
            return Err(CliError::Acceptance(format!("{failures} uniqueness failures")));
        }
        return Ok(());
    }

    println!("id-assign: star k={k} trials={trials} seed={seed}");
    let report = idassign::monte_carlo_star(k, trials, seed)?;
    println!("{}", serde_json::to_string_pretty(&report).map_err(AmpError::from)?);
    if report.uniqueness_failures > 0 {
        return Err(CliError::Acceptance(format!(
            "{} uniqueness failures",
            report.uniqueness_failures
        )));
    }
    Ok(())
}

fn load_model_config(path: &Path) -> Result<ModelConfigFile, AmpError> {
    let file = fs::File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

fn tu_task(data: Option<&Path>) -> Result<(Task, usize, usize), AmpError> {
    let dir = data.ok_or_else(|| AmpError::invalid("tu task requires --data <dir>".to_string()))?;
    let instances = tu::load_tu_dataset(dir)?;
    if instances.is_empty() {
        return Err(AmpError::invalid("dataset is empty".to_string()));
    }
    let input_width = instances[0].graph.feature_width();
    let classes = instances
        .iter()
        .filter_map(|i| i.graph.graph_label)
        .max()
        .map_or(2, |m| m + 1);
    Ok((
        Task::single(instances, RunProtocol::PooledPerStart { run_budget: 15 }, classes),
        input_width,
        classes,
    ))
}

pub fn train(
    task_id: &str,
    model_path: &Path,
    out: &Path,
    seed: u64,
    data: Option<&Path>,
    iterations: Option<usize>,
) -> CliResult {
    let mut config = load_model_config(model_path)?;
    config.seed = seed;
    println!(
        "train: task={task_id} seed={seed} model={}",
        serde_json::to_string(&config).map_err(AmpError::from)?
    );

    let (task, input_width, classes, default_iters, stop_early) = match task_id {
        "parity" => {
            let exp = ExperimentConfig::parity(config.clone(), vec![seed], vec![]);
            (bench::parity_train_task(&exp, seed)?, 1, 2, 1000, None)
        }
        "cycle-pair" => (
            Task::single(
                generate::cycle_pair_instances(),
                RunProtocol::PerStart { budget_factor: 5 },
                2,
            ),
            1,
            2,
            300,
            Some(1.0),
        ),
        "tu" => {
            let (task, input_width, classes) = tu_task(data)?;
            (task, input_width, classes, 100, Some(1.0))
        }
        other => {
            return Err(AmpError::invalid(format!("unknown task {other:?} (parity | cycle-pair | tu)")).into());
        }
    };

    let mut model = config.build(input_width, classes * task.heads)?;
    let train_cfg = TrainConfig {
        iterations: iterations.unwrap_or(default_iters),
        stop_at_accuracy: stop_early,
        ..TrainConfig::default()
    };
    let history = train_model(&mut model, &task, &train_cfg)?;
    let last = history.last().expect("at least one iteration");
    println!(
        "trained {} iterations: loss {:.6} accuracy {:.4}",
        history.len(),
        last.loss,
        last.accuracy
    );

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(AmpError::from)?;
        }
    }
    let file = fs::File::create(out).map_err(AmpError::from)?;
    model.save(&config, file)?;
    println!("checkpoint written to {}", out.display());
    Ok(())
}

pub fn eval(
    task_id: &str,
    ckpt: &Path,
    sizes: &[usize],
    seed: u64,
    out_dir: Option<&Path>,
    data: Option<&Path>,
    jobs: usize,
) -> CliResult {
    let file = fs::File::open(ckpt).map_err(AmpError::from)?;
    let (model, config) = AmpModel::load(BufReader::new(file))?;
    println!(
        "eval: task={task_id} seed={seed} jobs={jobs} ckpt={} model={}",
        ckpt.display(),
        serde_json::to_string(&config).map_err(AmpError::from)?
    );
    let dir = results_dir(out_dir);
    fs::create_dir_all(&dir).map_err(AmpError::from)?;

    match task_id {
        "parity" => {
            let sizes = if sizes.is_empty() { vec![10, 25, 50] } else { sizes.to_vec() };
            let exp = ExperimentConfig::parity(config.clone(), vec![seed], sizes.clone());
            let train_max_distance = bench::start_distances(&bench::parity_train_task(&exp, seed)?)?
                .iter()
                .flat_map(|d| d.iter().copied())
                .max()
                .unwrap_or(0);

            let evals: Vec<bench::SizeEval> = if jobs > 1 {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(jobs)
                    .build()
                    .map_err(|e| AmpError::invalid(e.to_string()))?;
                let results: Vec<_> = pool.install(|| {
                    use rayon::prelude::*;
                    sizes
                        .par_iter()
                        .map(|&size| bench::evaluate_parity_size(&model, &exp, size, seed, train_max_distance))
                        .collect()
                });
                results.into_iter().collect::<Result<_, _>>()?
            } else {
                sizes
                    .iter()
                    .map(|&size| bench::evaluate_parity_size(&model, &exp, size, seed, train_max_distance))
                    .collect::<Result<_, _>>()?
            };

            for eval in &evals {
                println!("size {:4}: accuracy {:.4} ({} / {})", eval.size, eval.accuracy, eval.correct, eval.total);
            }
            let outcome = bench::SeedOutcome {
                seed,
                final_train_loss: f64::NAN,
                final_train_accuracy: f64::NAN,
                iterations_run: 0,
                per_size: evals,
            };
            let report = bench::summarize(exp, vec![outcome]);
            let csv_path = dir.join("parity_metrics.csv");
            let mut csv = Vec::new();
            bench::write_metrics_csv(&report, &mut csv)?;
            fs::write(&csv_path, csv).map_err(AmpError::from)?;
            let json_path = dir.join("parity_summary.json");
            fs::write(&json_path, serde_json::to_vec_pretty(&report).map_err(AmpError::from)?).map_err(AmpError::from)?;
            println!("wrote {} and {}", csv_path.display(), json_path.display());
        }
        "cycle-pair" => {
            let task = Task::single(
                generate::cycle_pair_instances(),
                RunProtocol::PerStart { budget_factor: 5 },
                2,
            );
            let outcome = evaluate(&model, &task)?;
            println!("accuracy {:.4} ({} / {})", outcome.accuracy, outcome.correct, outcome.total);
            let json_path = dir.join("cycle_pair_summary.json");
            let summary = serde_json::json!({"task": "cycle-pair", "seed": seed, "accuracy": outcome.accuracy});
            fs::write(&json_path, serde_json::to_vec_pretty(&summary).map_err(AmpError::from)?).map_err(AmpError::from)?;
            println!("wrote {}", json_path.display());
        }
        "tu" => {
            let (task, _, _) = tu_task(data)?;
            let outcome = evaluate(&model, &task)?;
            println!("accuracy {:.4} ({} / {})", outcome.accuracy, outcome.correct, outcome.total);
        }
        other => {
            return Err(AmpError::invalid(format!("unknown task {other:?}")).into());
        }
    }
    Ok(())
}

pub fn inspect(trace: &Path) -> CliResult {
    use std::io::Write;
    let text = fs::read_to_string(trace).map_err(AmpError::from)?;
    let stdout = std::io::stdout();
    let mut out = std::io::BufWriter::new(stdout.lock());
    let mut count = 0usize;
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let step: serde_json::Value = serde_json::from_str(line).map_err(|e| AmpError::ParseError {
            line: i + 1,
            message: e.to_string(),
        })?;
        let arrival = step["arrival_time"].as_f64().unwrap_or(f64::NAN);
        let receiver = &step["receiver"];
        let sender = match &step["message"]["sender"] {
            serde_json::Value::Null => "start".to_string(),
            v => format!("node {v}"),
        };
        let bits: Vec<String> = step["message"]["protocol_bits"]
            .as_array()
            .map(|a| a.iter().map(|b| b.as_str().unwrap_or("?").to_string()).collect())
            .unwrap_or_default();
        let bits = if bits.is_empty() { "-".to_string() } else { bits.join("|") };
        let emitted = step["emitted_payload"].as_array().map_or(0, Vec::len);
        let written = writeln!(
            out,
            "[t={arrival:9.4}] node {receiver} <- {sender} [{bits}] payload {} emitted {emitted}",
            step["message"]["payload"]
        );
        if written.is_err() {
            // Receiving end of a pipe closed (inspect | head); stop quietly.
            return Ok(());
        }
        count += 1;
    }
    let _ = writeln!(out, "{count} steps");
    Ok(())
}
