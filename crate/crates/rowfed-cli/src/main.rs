//! Experiment driver for row-wise fusion federated regression.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O error.

mod config;
mod runner;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sha2::{Digest, Sha256};

use config::ExperimentConfig;
use rowfed::RowFedError;
use runner::RunContext;

#[derive(Parser)]
#[command(
    name = "rowfed",
    about = "Sparse row-wise fusion estimation for personalized federated multivariate regression"
)]
struct Cli {
    /// Path to the TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override (also settable through ROWFED_SEED).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory override.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker-thread override for replication/grid parallelism.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run replicated synthetic experiments and aggregate the metrics.
    Simulate,
    /// Fit one scenario at the configured lambda pair.
    Fit,
    /// Grid-search the lambda pair by GIC and fit at the selection.
    Tune,
    /// Re-evaluate a dumped coefficient stack against its scenario.
    Eval {
        /// theta.csv produced by `fit` or `tune`.
        #[arg(long)]
        theta: PathBuf,
    },
    /// Ingest a delimited table, split per client, fit, and report held-out
    /// error per client.
    RealData,
}

fn build_context(cli: &Cli) -> anyhow::Result<RunContext> {
    let (config_bytes, mut config) = match &cli.config {
        Some(path) => {
            use anyhow::Context;
            let bytes = std::fs::read(path)
                .with_context(|| format!("cannot read config {}", path.display()))?;
            let text = String::from_utf8(bytes.clone())
                .map_err(|e| anyhow::anyhow!("config is not UTF-8: {e}"))?;
            (bytes, ExperimentConfig::from_toml(&text)?)
        }
        None => {
            let cfg = ExperimentConfig::default();
            (cfg.to_toml()?.into_bytes(), cfg)
        }
    };
    let config_hash = hex_digest(&config_bytes);
    let mut master_seed = config.run.seed;
    if let Ok(env_seed) = std::env::var("ROWFED_SEED") {
        let parsed: u64 = env_seed
            .parse()
            .map_err(|_| anyhow::anyhow!("ROWFED_SEED must be an integer, got '{env_seed}'"))?;
        eprintln!("seed override from ROWFED_SEED: {parsed}");
        master_seed = parsed;
    }
    if let Some(seed) = cli.seed {
        eprintln!("seed override from --seed: {seed}");
        master_seed = seed;
    }
    if let Some(workers) = cli.workers {
        config.experiment.workers = workers;
    }
    let out_dir = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&config.output.dir));
    Ok(RunContext {
        config,
        config_hash,
        master_seed,
        out_dir,
    })
}

fn hex_digest(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn exit_code_for(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(rf) = cause.downcast_ref::<RowFedError>() {
            return match rf {
                RowFedError::NumericalFailure(_) | RowFedError::RankDeficient(_) => 3,
                RowFedError::Io(_) => 4,
                _ => 2,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = build_context(&cli).and_then(|ctx| match &cli.command {
        Command::Simulate => runner::cmd_simulate(&ctx),
        Command::Fit => runner::cmd_fit(&ctx),
        Command::Tune => runner::cmd_tune(&ctx),
        Command::Eval { theta } => runner::cmd_eval(&ctx, theta),
        Command::RealData => runner::cmd_real_data(&ctx),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
