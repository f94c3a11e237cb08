use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use statforge::models::ModelId;

mod commands;

#[derive(Parser, Debug)]
#[command(name = "statforge", version, about = "Learned summary statistics for ABC on stochastic maps")]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads for simulation, encoding and ABC.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// Seed for every stochastic stage.
    #[arg(long, global = true, env = "STATFORGE_SEED")]
    pub seed: Option<u64>,

    /// Sectioned TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_parser = parse_model)]
    pub model: Option<ModelId>,

    /// Configuration override, e.g. `--set abc.budget=5000`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

fn parse_model(s: &str) -> Result<ModelId, String> {
    s.parse().map_err(|e: statforge::Error| e.to_string())
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate trajectories at fixed parameters.
    Simulate(commands::SimulateArgs),
    /// Deterministic orbit amplitudes over the α range of the prior.
    Bifurcation(commands::BifurcationArgs),
    /// (α̂, σ̂², √σ̂², o) of NLAR1 trajectories.
    Suffstats(commands::SuffstatsArgs),
    /// Train an explicit noise-conditional autoencoder.
    TrainEnca,
    /// Train an implicit noise-conditional autoencoder.
    TrainInca,
    /// Summary statistics of a trajectory.
    Encode(commands::EncodeArgs),
    /// ABC posterior with learned or sufficient statistics.
    Abc(commands::AbcArgs),
    /// Metropolis posterior from the exact likelihood.
    Mcmc(commands::McmcArgs),
    /// Posterior comparisons and figure tables.
    Diagnose(commands::DiagnoseArgs),
    /// End-to-end micro-pipeline on NLAR1.
    Smoke,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let threads = cli
        .global
        .threads
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global() {
        log::warn!("thread pool: {e}");
    }
    let ctx = commands::Context::new(cli.global, threads);
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&ctx, &a),
        Command::Bifurcation(a) => commands::bifurcation(&ctx, &a),
        Command::Suffstats(a) => commands::suffstats(&ctx, &a),
        Command::TrainEnca => commands::train_enca(&ctx),
        Command::TrainInca => commands::train_inca(&ctx),
        Command::Encode(a) => commands::encode(&ctx, &a),
        Command::Abc(a) => commands::abc(&ctx, &a),
        Command::Mcmc(a) => commands::mcmc(&ctx, &a),
        Command::Diagnose(a) => commands::diagnose(&ctx, &a),
        Command::Smoke => commands::smoke(&ctx),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("statforge: {e}");
            ExitCode::from(e.code())
        }
    }
}
