use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use jmcheck::replicate::{Regime, DEFAULT_REPLICATES};
use jmcheck::scenario::AnalysisModelKind;

mod commands;
mod config;
mod error;
mod svg;

use error::{CliError, Result};

/// Posterior predictive goodness-of-fit checks for joint longitudinal and
/// time-to-event models.
#[derive(Parser)]
#[command(name = "jmcheck", version)]
struct Cli {
    /// Worker threads (0 uses every core). Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the scenario model.
    Simulate {
        /// Scenario JSON; defaults to the built-in scenario.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit one of the analysis models with the built-in sampler.
    Fit {
        /// Directory holding longitudinal.csv and survival.csv.
        #[arg(long)]
        data: PathBuf,
        /// Fit JSON (model, scenario, mcmc, priors).
        #[arg(long)]
        config: Option<PathBuf>,
        /// true_model, linear_trend, exp_outcome or slope_form; overrides the config.
        #[arg(long)]
        model: Option<AnalysisModelKind>,
        /// MCMC seed; overrides the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the generating parameters as a single draw instead of fitting.
        #[arg(long)]
        oracle: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replicate data under a regime and run goodness-of-fit statistics.
    Check {
        #[arg(long)]
        data: PathBuf,
        /// Output directory of `jmcheck fit`.
        #[arg(long)]
        fit: PathBuf,
        /// Alternative draws file (CSV or JSON) replacing the fit's draws.
        #[arg(long)]
        draws: Option<PathBuf>,
        /// Check JSON (loess, concordance, subject, max_lag, mh).
        #[arg(long)]
        config: Option<PathBuf>,
        /// pp, prior, dynamic:<t>, cv:<V> or cv:<V>:dynamic.
        #[arg(long, default_value = "pp")]
        regime: Regime,
        /// Statistics, comma separated or repeated; `all` runs every one.
        #[arg(long, default_value = "all")]
        stat: Vec<String>,
        /// Number of replicated datasets.
        #[arg(long = "M", default_value_t = DEFAULT_REPLICATES)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Concordance markers older than this are dropped.
        #[arg(long)]
        kappa: Option<f64>,
        /// Loess span.
        #[arg(long)]
        span: Option<f64>,
        /// Also write every replicated dataset.
        #[arg(long)]
        save_replicates: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare the MISE of several check directories.
    Report {
        /// Output directories of `jmcheck check`, one per model.
        #[arg(long = "check", required = true)]
        checks: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("--threads: {e}")))?;
    match cli.command {
        Command::Simulate { config, seed, out } => commands::simulate(config.as_deref(), seed, &out),
        Command::Fit {
            data,
            config,
            model,
            seed,
            oracle,
            out,
        } => commands::fit(commands::FitArgs {
            data: &data,
            config: config.as_deref(),
            model,
            seed,
            oracle,
            out: &out,
        }),
        Command::Check {
            data,
            fit,
            draws,
            config,
            regime,
            stat,
            m,
            seed,
            kappa,
            span,
            save_replicates,
            out,
        } => commands::check(commands::CheckArgs {
            data: &data,
            fit: &fit,
            draws: draws.as_deref(),
            config: config.as_deref(),
            regime,
            statistics: commands::parse_statistics(&stat)?,
            m,
            seed,
            kappa,
            span,
            save_replicates,
            out: &out,
        }),
        Command::Report { checks, out } => commands::report(&checks, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
