//! `ait`: command-line front end for the codec, prior, convergence and
//! few-shot selection tools.
//!
//! Every command prints a JSON report on stdout. Errors are printed as JSON
//! on stderr and mapped to exit codes: 2 usage, 3 configuration, 4 input,
//! 5 remote model, 6 failed post-condition, 1 anything else.

mod commands;
mod config;
mod specs;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::commands::Outcome;
use crate::config::{Failure, FileConfig, Kind};

#[derive(Debug, Parser)]
#[command(
    name = "ait",
    version,
    about = "Model-driven compression, priors and few-shot selection"
)]
struct Cli {
    /// TOML file supplying defaults for any flag; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Include the wall-clock duration in the report (it then differs
    /// between runs).
    #[arg(long, global = true)]
    record_timing: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Encode a file with a model into a .aitc container.
    Compress(commands::CompressArgs),
    /// Decode a .aitc container.
    Decompress(commands::DecompressArgs),
    /// Train an n-gram model file.
    Train(commands::TrainArgs),
    /// Log-prior of a sequence under both length models.
    Prior(commands::SequenceArgs),
    /// Next-symbol prediction from prior ratios.
    Predict(commands::SequenceArgs),
    /// Check the asymptotic ratio between prior and model predictions.
    #[command(name = "verify-theorem2")]
    VerifyTheorem2(commands::VerifyArgs),
    /// Brute-force total prior mass over all strings of each length.
    Semimeasure(commands::SemimeasureArgs),
    /// Cumulative squared prediction error against a computable source.
    Converge(commands::ConvergeArgs),
    /// Greedy confidence-based few-shot example selection.
    Select(commands::SelectArgs),
    /// Classification accuracy on the held-out split.
    Evaluate(commands::EvaluateArgs),
}

fn run(cli: &Cli) -> anyhow::Result<Outcome> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    match &cli.command {
        Command::Compress(a) => commands::compress(a, &file),
        Command::Decompress(a) => commands::decompress_cmd(a, &file),
        Command::Train(a) => commands::train(a, &file),
        Command::Prior(a) => commands::prior(a, &file),
        Command::Predict(a) => commands::predict(a, &file),
        Command::VerifyTheorem2(a) => commands::verify(a, &file),
        Command::Semimeasure(a) => commands::semimeasure(a, &file),
        Command::Converge(a) => commands::converge(a, &file),
        Command::Select(a) => commands::select(a, &file),
        Command::Evaluate(a) => commands::evaluate_cmd(a, &file),
    }
}

fn report_error(kind: Kind, message: &str) -> ExitCode {
    let body = json!({"error": {"kind": kind, "code": kind.exit_code(), "message": message}});
    eprintln!("{body}");
    ExitCode::from(kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report_error(Kind::Usage, e.to_string().trim_end()),
    };

    let started = Instant::now();
    let outcome = run(&cli);
    let elapsed = started.elapsed();
    eprintln!("ait: finished in {} ms", elapsed.as_millis());

    let mut outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            let kind = e.downcast_ref::<Failure>().map_or(Kind::Other, |f| f.kind);
            return report_error(kind, &format!("{e:#}"));
        }
    };
    if cli.record_timing {
        outcome.report.duration_ms = Some(elapsed.as_millis());
    }
    let text = serde_json::to_string_pretty(&outcome.report).expect("reports serialize") + "\n";
    print!("{text}");
    if let Some(path) = &outcome.report_path {
        if let Err(e) = std::fs::write(path, &text) {
            return report_error(Kind::Other, &format!("{}: {e}", path.display()));
        }
    }
    match outcome.violation {
        Some(message) => report_error(Kind::Postcondition, &message),
        None => ExitCode::SUCCESS,
    }
}
