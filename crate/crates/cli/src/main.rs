//! `cace` command-line runner.
//!
//! Exit codes: 0 success, 2 input error, 3 partial failure, 4 digest
//! mismatch, 5 internal error. Failures print one JSON object on stderr.
//! Log verbosity follows `RUST_LOG` (default `info`).

mod commands;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use cace_core::model::ModelVariant;
use clap::{Args, Parser, Subcommand};

use commands::{cmd_diagnose, cmd_fit, cmd_simulate, DiagnoseArgs, Overrides};
use error::CliError;

#[derive(Parser)]
#[command(name = "cace", version, about = "Bayesian complier average causal effect under two-sided noncompliance")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelFlags {
    /// Master seed; chain and replicate seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    chains: Option<usize>,
    /// One of A, Astar, B, Cstar, D.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<ModelVariant>,
    /// Draw labels of missing-outcome patients from the stratum model alone.
    #[arg(long)]
    marginal_missing_y: bool,
}

impl ModelFlags {
    fn overrides(&self) -> Overrides {
        Overrides {
            seed: self.seed,
            chains: self.chains,
            variant: self.variant,
            marginal_missing_y: self.marginal_missing_y,
        }
    }
}

fn parse_variant(s: &str) -> Result<ModelVariant, String> {
    s.parse().map_err(|e: cace_core::CaceError| e.to_string())
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model and write draws.csv, summary.json and manifest.json.
    Fit {
        #[arg(long)]
        dataset: PathBuf,
        /// TOML file with `[model]` settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
    /// Complier-probability grids, shaded histograms and PSRF from saved draws.
    Diagnose {
        #[arg(long)]
        draws: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Fit manifest to check digests against; defaults to the one next to the draws.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict to one assignment arm.
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=1))]
        z: Option<u8>,
        /// Outcome value at which complier probabilities are evaluated.
        #[arg(long)]
        y_eval: Option<f64>,
        #[arg(long)]
        bins: Option<usize>,
        #[arg(long, default_value_t = cace_core::diagnostics::DEFAULT_GRID_SIZE)]
        grid_size: usize,
        #[arg(long, default_value_t = cace_core::diagnostics::DEFAULT_PSRF_THRESHOLD)]
        threshold: f64,
    },
    /// Monte Carlo bias study over a grid of covariate-outcome correlations.
    Simulate {
        /// TOML file with `[simulation]` settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        model: ModelFlags,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Fit { dataset, config, out, model } => cmd_fit(&dataset, config.as_deref(), &out, &model.overrides()),
        Command::Diagnose { draws, dataset, out, manifest, z, y_eval, bins, grid_size, threshold } => {
            cmd_diagnose(&DiagnoseArgs {
                draws,
                dataset,
                out,
                manifest,
                arms: z.map(|z| vec![z]).unwrap_or_else(|| vec![0, 1]),
                y_eval,
                bins,
                grid_size,
                threshold,
            })
        }
        Command::Simulate { config, out, model } => cmd_simulate(config.as_deref(), &out, &model.overrides()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.exit_code();
            let msg = serde_json::json!({ "error": e.kind(), "message": e.to_string(), "exit_code": code });
            eprintln!("{msg}");
            ExitCode::from(code as u8)
        }
    }
}
