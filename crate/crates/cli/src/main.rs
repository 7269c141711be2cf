use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use egp_core::experiment::{self, Options, Outcome};
use egp_core::prune::PruneMode;

/// Entropy-guided pruning experiments.
#[derive(Debug, Parser)]
#[command(name = "egp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a fresh network from a config.
    Train(Common),
    /// Iteratively prune a trained checkpoint.
    Prune(Common),
    /// Drop dead neurons and fuse/linearize zero-entropy layers.
    Reduce(Common),
    /// Retrain a checkpoint's architecture from a fresh initialization.
    Scratch(Common),
    /// Build result tables and charts from record files.
    Report {
        /// Record files written by the other commands.
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Print and export the entropy report of a checkpoint.
    Analyze(Common),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Egp,
    Vanilla,
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides prune.mode.
    #[arg(long, value_enum)]
    mode: Option<Mode>,
}

impl From<Common> for Options {
    fn from(c: Common) -> Self {
        Options {
            config: Some(c.config),
            checkpoint: c.checkpoint,
            out: c.out,
            seed: c.seed,
            mode: c.mode.map(|m| match m {
                Mode::Egp => PruneMode::Egp,
                Mode::Vanilla => PruneMode::Vanilla,
            }),
        }
    }
}

fn run(cmd: Command) -> egp_core::Result<Outcome> {
    match cmd {
        Command::Train(c) => experiment::cmd_train(&c.into()),
        Command::Prune(c) => experiment::cmd_prune(&c.into()),
        Command::Reduce(c) => experiment::cmd_reduce(&c.into()),
        Command::Scratch(c) => experiment::cmd_scratch(&c.into()),
        Command::Analyze(c) => experiment::cmd_analyze(&c.into()),
        Command::Report { records, out } => experiment::cmd_report(&records, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(out) => {
            println!("{}", out.summary);
            for p in out.written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
