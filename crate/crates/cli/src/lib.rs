//! Command-line experiments for nonnegative Laplace-based releases.

pub mod commands;
pub mod config;
pub mod output;

use std::io::Write;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use commands::{CommandOutput, Outcome, QueryArgs, VerifyArgs};
use config::{ExperimentArgs, ExperimentConfig, OutputFormat};

#[derive(Debug, Parser)]
#[command(name = "nonneg-dp", version, about = "Bias and privacy experiments for nonnegative Laplace mechanisms")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Bias over a grid of true values: closed form, quadrature and Monte Carlo
    BiasCurve(ExperimentArgs),
    /// Bias-optimal ramp translation for a Laplace scale
    OptimalAlpha(ExperimentArgs),
    /// Ramp vs restriction at the same privacy level
    Compare(ExperimentArgs),
    /// Certify the privacy level of a mechanism on a grid of adjacent pairs
    VerifyDp(VerifyArgs),
    /// Monte Carlo bias against the closed form, as z-scores
    McValidate(ExperimentArgs),
    /// Evaluate a query on a dataset and release it privately
    Query(QueryArgs),
}

fn emit(out: &CommandOutput, path: Option<&std::path::Path>) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, &out.text).with_context(|| format!("cannot write output file {}", p.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(out.text.as_bytes())?;
            Ok(stdout.flush()?)
        }
    }
}

/// Run one subcommand, writing its report to `--out` or stdout.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let resolve = |a: &ExperimentArgs, f| ExperimentConfig::resolve(a, f);
    let (output, out_path) = match &cli.command {
        Command::BiasCurve(a) => {
            let cfg = resolve(a, OutputFormat::Csv)?;
            (commands::cmd_bias_curve(&cfg)?, cfg.out)
        }
        Command::OptimalAlpha(a) => {
            let cfg = resolve(a, OutputFormat::Json)?;
            (commands::cmd_optimal_alpha(&cfg)?, cfg.out)
        }
        Command::Compare(a) => {
            let cfg = resolve(a, OutputFormat::Csv)?;
            (commands::cmd_compare(&cfg)?, cfg.out)
        }
        Command::VerifyDp(v) => {
            let cfg = resolve(&v.experiment, OutputFormat::Json)?;
            (commands::cmd_verify_dp(&cfg, v.claimed_epsilon)?, cfg.out)
        }
        Command::McValidate(a) => {
            let cfg = resolve(a, OutputFormat::Csv)?;
            (commands::cmd_mc_validate(&cfg)?, cfg.out)
        }
        Command::Query(q) => {
            commands::cmd_query(q)?
        }
    };
    emit(&output, out_path.as_deref())?;
    Ok(output.outcome)
}
