mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pgnkit_core::{EnvKind, PgnObjective, PgnVariant};

/// Train DQN victims on toy image games, attack their observations and
/// score the attacks.
#[derive(Debug, Parser)]
#[command(name = "pgnkit", version)]
struct Cli {
    /// Sectioned TOML project configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a DQN agent and write its checkpoint and training curve.
    TrainAgent(TrainAgentArgs),
    /// Roll out an agent greedily and store the visited observations.
    Collect(CollectArgs),
    /// Train a perturbation generator on a collected dataset.
    TrainPgn(TrainPgnArgs),
    /// Attack an agent for a number of episodes and report the metrics.
    Attack(AttackArgs),
    /// Measure per-example generation latency of several methods.
    BenchmarkTime(BenchmarkArgs),
    /// Merge run reports into one summary table.
    Report(ReportArgs),
    /// Recompute the bundled AR reference cells.
    VerifyAr(VerifyArgs),
}

#[derive(Debug, Args)]
struct TrainAgentArgs {
    #[arg(long)]
    env: EnvKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Overrides `dqn.training_episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    /// Training curve CSV; defaults to `<out>.curve.csv`.
    #[arg(long)]
    curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CollectArgs {
    #[arg(long)]
    agent: PathBuf,
    /// Overrides `pgn.collect_episodes`.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value_t = 1_000)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainPgnArgs {
    #[arg(long)]
    agent: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    variant: Option<PgnVariant>,
    #[arg(long)]
    objective: Option<PgnObjective>,
    /// Overrides `pgn.epochs`.
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Loss curve CSV; defaults to `<out>.loss.csv`.
    #[arg(long)]
    loss_curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AttackArgs {
    #[arg(long)]
    agent: PathBuf,
    /// fgsm, pgd, cw, t-pgna, t-pgng, u-pgna, u-pgng or none.
    #[arg(long)]
    method: commands::Method,
    /// PGN checkpoint for the t-/u- methods.
    #[arg(long)]
    pgn: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory; defaults to `<report dir>/<method>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchmarkArgs {
    #[arg(long)]
    agent: PathBuf,
    /// Gradient baselines to time, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [commands::Method::Fgsm, commands::Method::Pgd, commands::Method::Cw])]
    methods: Vec<commands::Method>,
    /// PGN checkpoints to time; each adds one row.
    #[arg(long)]
    pgn: Vec<PathBuf>,
    #[arg(long, default_value_t = 100)]
    states: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Timing CSV; defaults to `<report dir>/timing.csv`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Run report CSVs to merge.
    runs: Vec<PathBuf>,
    /// Summary CSV; printed to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Reference table CSV; the bundled tables by default.
    #[arg(long)]
    tables: Option<PathBuf>,
    #[arg(long, default_value_t = pgnkit_core::metrics::AR_TOLERANCE)]
    tolerance: f64,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { commands::EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::EXIT_RUNTIME)
        }
    }
}
