use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flame_cli::commands::{self, RunOptions};
use flame_cli::presets::{self, Preset};
use flame_cli::CliResult;

/// Flame-front laboratory: generate solver datasets, train neural
/// time-advancement operators, evaluate rollouts and plot the metrics.
#[derive(Parser)]
#[command(name = "flamelab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate trajectories and write a dataset file.
    Generate(Common),
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue the run already in --out.
        #[arg(long)]
        resume: bool,
        /// No per-epoch progress lines.
        #[arg(long)]
        quiet: bool,
    },
    /// Roll a checkpoint out against the reference solver and write metric CSVs.
    Evaluate(Common),
    /// Render metric CSVs as SVG line charts.
    Plot {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        csv: Vec<PathBuf>,
    },
    /// Write the configuration files of a named preset, or list presets.
    Preset {
        name: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn options(c: &Common, resume: bool, quiet: bool) -> RunOptions {
    RunOptions { seed: c.seed, workers: c.workers, resume, quiet }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Generate(c) => {
            let s = commands::generate(&c.config, &c.out, &options(&c, false, false))?;
            println!("{s}");
        }
        Command::Train { common, resume, quiet } => {
            let s = commands::train(&common.config, &common.out, &options(&common, resume, quiet))?;
            println!("{s}");
        }
        Command::Evaluate(c) => {
            let s = commands::evaluate(&c.config, &c.out, &options(&c, false, false))?;
            println!("{}", serde_json::to_string_pretty(&s).expect("summary serialises"));
        }
        Command::Plot { out, csv } => {
            for p in commands::plot(&csv, &out)? {
                println!("wrote {}", p.display());
            }
        }
        Command::Preset { name: None, .. } => {
            for n in presets::names() {
                let p = Preset::load(n)?;
                println!("{n:18} {}", p.description);
            }
        }
        Command::Preset { name: Some(name), out } => {
            let p = Preset::load(&name)?;
            let dir = out.unwrap_or_else(|| PathBuf::from(&name));
            for f in p.write(&dir)? {
                println!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("flamelab: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
