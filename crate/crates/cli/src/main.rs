//! `lipmargin`: fit, apply and evaluate margin-ratio Mahalanobis metrics.
//!
//! Exit codes: 0 success (including informational outcomes such as an
//! inapplicable bound), 2 input errors, 3 solver failures, 4 internal errors.

mod commands;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::GlobalArgs;

#[derive(Debug, Parser)]
#[command(name = "lipmargin", version, about = "Mahalanobis metric learning by Lipschitz margin ratios")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Learn a metric and write the model (plus a solver report next to it).
    Fit {
        data: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Solver report path [default: <output stem>.report.json].
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Classify a labeled file with a fitted model.
    Predict {
        data: PathBuf,
        #[arg(short, long)]
        model: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Margin, diameters and margin ratios under a model's metric or the identity.
    MarginReport {
        data: PathBuf,
        #[arg(short, long, conflicts_with = "identity")]
        model: Option<PathBuf>,
        /// Use the identity metric (the default when no model is given).
        #[arg(long)]
        identity: bool,
        /// Comma-separated row indices for an additional local report.
        #[arg(long, value_delimiter = ',')]
        local: Vec<usize>,
        /// `squared` (default) or `root`.
        #[arg(long, default_value = "squared")]
        form: String,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Repeated random-split accuracy of NN-Euclidean, LipD and LipI.
    Experiment {
        data: PathBuf,
        /// Full JSON report [default: stdout].
        #[arg(long)]
        json: Option<PathBuf>,
        /// Per-split CSV (variant, repeat, accuracy, wall_ms).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate the fat-shattering generalization bound.
    Bound {
        #[arg(long)]
        n: Option<u64>,
        #[arg(long)]
        k: Option<u64>,
        /// Surrogate constant C given directly.
        #[arg(long, conflicts_with_all = ["model", "data"])]
        surrogate_c: Option<f64>,
        #[arg(long, requires = "data")]
        model: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `diam` (C = L diam_all) or `intra` (C = L (diam_pos + diam_neg) + 2).
        #[arg(long, default_value = "intra")]
        c_mode: String,
        /// Use squared distances for the margin report instead of their root.
        #[arg(long)]
        squared: bool,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Projected-subgradient reference solve (small instances only).
    #[command(hide = true)]
    Oracle {
        data: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        iterations: usize,
        #[arg(long, default_value_t = 2)]
        restarts: usize,
        #[arg(long, default_value_t = 0.5)]
        step_size: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    std::panic::set_hook(Box::new(|info| eprintln!("internal error: {info}")));
    match std::panic::catch_unwind(|| commands::run(cli)) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
        Err(_) => ExitCode::from(4),
    }
}
