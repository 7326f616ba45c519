use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flexcmtf_cli::{parse_overrides, pipeline, CliError, RunConfig, Stage};

/// Compress a differentiable map into a layer of flexible activations.
#[derive(Parser)]
#[command(name = "flexcmtf", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a closed-form toy reference with samples, F and the Jacobian tensor.
    GenToy(CommonArgs),
    /// Train a small reference network by full-batch gradient descent.
    TrainRef(CommonArgs),
    /// Learn a flexible layer from a reference and write model, report and metrics.
    Compress(CommonArgs),
    /// Evaluate a model against its reference on held-out points.
    Eval(CommonArgs),
    /// Compress and evaluate once per value of rank, degree or basis.
    Sweep(CommonArgs),
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Configuration overrides, `--key value` or `--key=value`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn build_config(args: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::new(Stage::Io, format!("{}: {e}", path.display())))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    for (k, v) in parse_overrides(&args.overrides)? {
        cfg.set(&k, &v)?;
    }
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if let Some(out) = &args.out {
        cfg.set("out", &out.to_string_lossy())?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<pipeline::Summary, CliError> {
    let (args, cmd): (&CommonArgs, fn(&RunConfig) -> Result<pipeline::Summary, CliError>) =
        match &cli.command {
            Command::GenToy(a) => (a, pipeline::cmd_gen_toy),
            Command::TrainRef(a) => (a, pipeline::cmd_train_ref),
            Command::Compress(a) => (a, pipeline::cmd_compress),
            Command::Eval(a) => (a, pipeline::cmd_eval),
            Command::Sweep(a) => (a, pipeline::cmd_sweep),
        };
    cmd(&build_config(args)?)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(summary) => {
            for (k, v) in summary {
                println!("{k} = {v}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error {e}");
            ExitCode::FAILURE
        }
    }
}
