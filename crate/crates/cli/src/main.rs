//! Command-line front end for the entanglement-distribution toolkit.
//!
//! Subcommands map one-to-one onto the library's stages: `cavity` reports
//! resonator figures of merit, `spectrum` runs the analytic analyzer sweep,
//! `threshold` evaluates the parametric-oscillation threshold pipeline,
//! `synth` produces Monte-Carlo spectra from time-domain traces, and `fit`
//! estimates model parameters from a measured trace CSV.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! numerical failures during an otherwise valid run. Output files are
//! written atomically (temp file + rename) so a failed run never leaves a
//! partial file behind.

use std::path::PathBuf;
use std::process;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod output;

/// Frequency-domain simulator and estimator for squeezed-light
/// entanglement distribution.
#[derive(Debug, Parser)]
#[command(name = "entspec", version, about, disable_help_subcommand = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Report figures of merit for every cavity block in the config.
    Cavity(CommonArgs),
    /// Run the analytic sweep and write the model spectra.
    Spectrum(CommonArgs),
    /// Evaluate the parametric-oscillation threshold pipeline.
    Threshold(CommonArgs),
    /// Synthesize time-domain traces and estimate empirical spectra.
    Synth(SeededArgs),
    /// Estimate model parameters from a measured spectrum CSV.
    Fit(FitArgs),
}

/// Flags shared by every subcommand.
#[derive(Debug, Args)]
struct CommonArgs {
    /// Experiment description document (JSON).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Directory for output files (created if missing); when omitted the
    /// result is printed to stdout instead.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Stdout rendering when `--out` is omitted.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

/// Common flags plus a seed override for stochastic commands.
#[derive(Debug, Args)]
struct SeededArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Overrides the seed given in the config document.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
}

/// Arguments of the `fit` subcommand.
#[derive(Debug, Args)]
struct FitArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Overrides the multi-start seed given in the config document.
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Measured spectrum CSV (`frequency_hz,var_xsum_db,var_ydiff_db,duan,…`).
    #[arg(value_name = "DATA_CSV")]
    data: PathBuf,
}

/// Output format selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    /// Comma-separated table.
    Csv,
    /// Machine-readable document embedding the config.
    Json,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            // Help and version requests are successes; everything else is
            // a usage error.
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            process::exit(code);
        }
    };
    let result = match cli.command {
        Command::Cavity(args) => commands::cavity(&args),
        Command::Spectrum(args) => commands::spectrum(&args),
        Command::Threshold(args) => commands::threshold(&args),
        Command::Synth(args) => commands::synth(&args),
        Command::Fit(args) => commands::fit(&args),
    };
    if let Err(failure) = result {
        eprintln!("error: {}", failure.message());
        process::exit(failure.code());
    }
}
