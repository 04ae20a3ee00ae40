//! Command-line entry point.
//!
//! `spectra-decode <experiment> --config <path> [--set k=v ...] [--out <path>]`
//! runs an experiment and appends RunRecords to a JSONL results file;
//! `spectra-decode report --kind <kind> --in <results.jsonl> --out <csv>`
//! derives a CSV table from recorded results.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spectra_decode::runner::{
    emit_report, run_experiment, ExperimentConfig, ExperimentKind, ReportKind, RunnerError,
};

#[derive(Parser)]
#[command(name = "spectra-decode", version, about = "Interpolative decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// Dotted-path overrides, e.g. --set backend.model_id=gemma12b
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output results file (overrides config.output).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
#[command(rename_all = "snake_case")]
enum Command {
    /// Dual-prompt generation across a lambda grid.
    Generate(RunArgs),
    /// Big Five inventory protocol with lambda-score correlations.
    Inventory(RunArgs),
    /// Economic game (dictator, thieves, chicken) across lambdas.
    EconGame(RunArgs),
    /// Replay a game log through runoffs and score fidelity.
    RunoffReplay(RunArgs),
    /// Search for the lambda that best explains observed behavior.
    Twin(RunArgs),
    /// Build a regression dataset and train the lambda regressor.
    Regress(RunArgs),
    /// Derive a CSV table from a results file.
    Report {
        /// correlation_table, fidelity_table, or regression_table.
        #[arg(long)]
        kind: String,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(args: &RunArgs, expected: ExperimentKind) -> Result<ExperimentConfig, RunnerError> {
    let mut value = ExperimentConfig::value_from_file(&args.config)?;
    for assignment in &args.set {
        ExperimentConfig::apply_set(&mut value, assignment)?;
    }
    if let Some(out) = &args.out {
        value["output"] = serde_json::Value::String(out.display().to_string());
    }
    let config = ExperimentConfig::from_value(value)?;
    if config.experiment != expected {
        return Err(RunnerError::Config(format!(
            "config declares experiment {:?} but the {} subcommand was invoked",
            config.experiment.as_str(),
            expected.as_str()
        )));
    }
    Ok(config)
}

fn run(args: &RunArgs, expected: ExperimentKind) -> Result<(), RunnerError> {
    let config = load_config(args, expected)?;
    let path = run_experiment(&config)?;
    println!("results appended to {}", path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Generate(args) => run(args, ExperimentKind::Generate),
        Command::Inventory(args) => run(args, ExperimentKind::Inventory),
        Command::EconGame(args) => run(args, ExperimentKind::EconGame),
        Command::RunoffReplay(args) => run(args, ExperimentKind::RunoffReplay),
        Command::Twin(args) => run(args, ExperimentKind::Twin),
        Command::Regress(args) => run(args, ExperimentKind::Regress),
        Command::Report { kind, input, out } => (|| {
            let kind = ReportKind::parse(kind).ok_or_else(|| {
                RunnerError::Config(format!(
                    "unknown report kind {kind:?}; expected correlation_table, fidelity_table, or regression_table"
                ))
            })?;
            let path = emit_report(input, kind, out)?;
            println!("report written to {}", path.display());
            Ok(())
        })(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
