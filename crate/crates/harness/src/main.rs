use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cusp_harness::{run, CommandKind, ExperimentConfig, HarnessError};

#[derive(Debug, Parser)]
#[command(name = "cusp", version, about = "Surrogate-pattern uncertainty experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `output_dir`, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes a checkpoint, a train report and reconstruction dumps.
    Train(RunArgs),
    /// Out-of-distribution detection AUC for every scoring method.
    EvalOod(RunArgs),
    /// Uncertainty of label-flipped training samples against clean ones.
    EvalFlip(RunArgs),
    /// FGM accuracy against epsilon for surrogate-trained and plain models.
    EvalAdv(RunArgs),
    /// Misclassification detection with reconstruction scores and a secondary detector.
    EvalDetector(RunArgs),
    /// Mean uncertainty under rotation, noise and erasing.
    EvalCorrupt(RunArgs),
    /// Target and mean reconstructed patterns of a checkpoint as PGM images.
    DumpPatterns(RunArgs),
}

fn execute(command: Command) -> Result<PathBuf, HarnessError> {
    let (kind, args) = match command {
        Command::Train(a) => (CommandKind::Train, a),
        Command::EvalOod(a) => (CommandKind::EvalOod, a),
        Command::EvalFlip(a) => (CommandKind::EvalFlip, a),
        Command::EvalAdv(a) => (CommandKind::EvalAdv, a),
        Command::EvalDetector(a) => (CommandKind::EvalDetector, a),
        Command::EvalCorrupt(a) => (CommandKind::EvalCorrupt, a),
        Command::DumpPatterns(a) => (CommandKind::DumpPatterns, a),
    };
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok(run(kind, &cfg, &out)?.report)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(report) => {
            println!("{}", report.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
