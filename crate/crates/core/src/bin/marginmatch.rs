use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use marginmatch::cli::{self, AblationKind};
use marginmatch::RunConfig;

#[derive(Parser)]
#[command(name = "marginmatch", version, about = "Pseudo-label selection experiments")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write its artifacts.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted-key override, e.g. `--set policy=fixmatch`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Recompute decisions from a recorded logit trace.
    Replay {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run an ablation grid (`thresholds` or `delta`).
    Ablate {
        kind: AblationKind,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Align per-pass metrics of several runs into CSV tables.
    Report {
        #[arg(long)]
        out: PathBuf,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn main() -> ExitCode {
    match execute(Args::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> marginmatch::Result<()> {
    match cmd {
        Command::Train { config, overrides } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let (dir, outcome) = cli::train(&cfg)?;
            let m = outcome.final_metrics();
            println!(
                "{}: {} passes, test error {:.4}, mask rate {:.4}",
                dir.display(),
                outcome.metrics.len(),
                m.test_error,
                m.mask_rate
            );
        }
        Command::Replay { trace, config, overrides, out } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let n = cli::replay(&trace, &cfg, &out)?;
            println!("{n} decisions written to {}", out.display());
        }
        Command::Ablate { kind, config, overrides, seeds, out } => {
            let cfg = RunConfig::load(config.as_deref(), &overrides)?;
            let summary = cli::ablate(kind, &cfg, &cli::seed_list(cfg.seed, seeds), &out)?;
            print!("{}", cli::render_table(kind, &summary));
        }
        Command::Report { out, runs } => {
            let r = cli::report(&runs, &out)?;
            for n in &r.notes {
                eprintln!("{n}");
            }
            println!("{} passes aligned, {} files written", r.rows, r.files.len());
        }
    }
    Ok(())
}
