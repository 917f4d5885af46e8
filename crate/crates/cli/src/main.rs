//! Single entry point: verification suites, protocol demos, training,
//! evaluation, and trace inspection.
//!
//! Exit codes: 0 success, 1 acceptance failure, 2 usage error, 3 numeric or
//! protocol failure.

use amp_core::error::AmpError;
use clap::{Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;

#[derive(Parser)]
#[command(name = "amp", version, about = "Asynchronous message passing on graphs")]
struct Cli {
    /// Fan independent runs/seeds across this many worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare the asynchronous simulation against the synchronous reference
    /// over random graphs; exit 0 iff the worst deviation is below 1e-9.
    VerifySim {
        #[arg(long, default_value_t = 50)]
        graphs: usize,
        #[arg(long, default_value_t = 12)]
        max_n: usize,
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Compare the exact 3-layer network against the direct transition rule
    /// on randomized in-domain inputs.
    VerifyMlp {
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
        #[arg(long)]
        seed: u64,
    },
    /// Monte Carlo the identifier-assignment protocol and print the report.
    IdAssign {
        /// Outer nodes of the star.
        #[arg(long, default_value_t = 4)]
        k: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long)]
        seed: u64,
        /// Run the iterated general-graph assignment instead of a single star.
        #[arg(long, default_value_t = false)]
        general: bool,
        /// Graph size for --general.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Train a model on a task and write a checkpoint.
    Train {
        /// Task id: parity | cycle-pair | tu.
        #[arg(long)]
        task: String,
        /// Model config JSON (cell kind, widths, halting, flags, seed).
        #[arg(long)]
        model: PathBuf,
        /// Checkpoint output path.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        /// Dataset directory (tu task).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<usize>,
    },
    /// Evaluate a checkpoint; writes CSV and a JSON summary.
    Eval {
        #[arg(long)]
        task: String,
        #[arg(long)]
        ckpt: PathBuf,
        /// Test graph sizes (parity task).
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<usize>,
        #[arg(long)]
        seed: u64,
        /// Output directory; defaults to $AMP_RESULTS_DIR or the working dir.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Replay a JSONL trace dump in a readable form.
    Inspect {
        #[arg(long)]
        trace: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let jobs = cli.jobs.max(1);
    let result = match cli.command {
        Command::VerifySim {
            graphs,
            max_n,
            layers,
            seed,
        } => commands::verify_sim(graphs, max_n, layers, seed, jobs),
        Command::VerifyMlp { samples, seed } => commands::verify_mlp(samples, seed),
        Command::IdAssign {
            k,
            trials,
            seed,
            general,
            n,
        } => commands::id_assign(k, trials, seed, general, n),
        Command::Train {
            task,
            model,
            out,
            seed,
            data,
            iterations,
        } => commands::train(&task, &model, &out, seed, data.as_deref(), iterations),
        Command::Eval {
            task,
            ckpt,
            sizes,
            seed,
            out_dir,
            data,
        } => commands::eval(&task, &ckpt, &sizes, seed, out_dir.as_deref(), data.as_deref(), jobs),
        Command::Inspect { trace } => commands::inspect(&trace),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Acceptance(msg)) => {
            eprintln!("FAIL: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Amp(err)) => {
            eprintln!("error: {err}");
            let code = match err {
                AmpError::NumericFailure { .. }
                | AmpError::ProtocolFailure(_)
                | AmpError::ProtocolViolation(_) => 3,
                _ => 2,
            };
            ExitCode::from(code)
        }
    }
}

pub enum CliError {
    Amp(AmpError),
    /// A check ran to completion and its numbers were out of bounds.
    Acceptance(String),
}

impl From<AmpError> for CliError {
    fn from(e: AmpError) -> Self {
        CliError::Amp(e)
    }
}

pub type CliResult = Result<(), CliError>;
