use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pact_cli::checks::{run_all, CheckOptions};
use pact_cli::commands::{cmd_report, cmd_run, cmd_sweep};
use pact_cli::CliError;

#[derive(Parser)]
#[command(name = "pact-sim", version, about = "Ask-or-act clarification simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy in one setting for every configured seed.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Rebuild CSV reports from a directory of traces.
    Report {
        /// Directory holding *.manifest.json files.
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write per-day gains against the paired never-ask cells.
        #[arg(long)]
        impact: bool,
        /// Merge traces whose config hashes differ.
        #[arg(long)]
        force: bool,
    },
    /// Run every policy x setting x seed cell in parallel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long, default_value_t = 0)]
        seed_offset: u64,
    },
    /// Run the oracle and property checks.
    Selfcheck,
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { config, out, seed_offset } => {
            let s = cmd_run(&config, out.as_deref(), seed_offset)?;
            print!("{}", s.table());
            println!("wrote {} cells to {}", s.cells.len(), s.out_dir.display());
        }
        Command::Sweep { config, out, workers, seed_offset } => {
            let s = cmd_sweep(&config, out.as_deref(), workers, seed_offset)?;
            print!("{}", s.table());
            println!("wrote {} cells and {} to {}", s.cells.len(), s.report.summary.display(), s.out_dir.display());
        }
        Command::Report { dir, out, impact, force } => {
            let r = cmd_report(&dir, out.as_deref(), impact, force)?;
            println!("{} cells -> {}", r.cells, r.files.per_day.display());
            if let Some(p) = r.impact {
                println!("impact -> {}", p.display());
            }
        }
        Command::Selfcheck => {
            let results = run_all(&CheckOptions::default());
            for r in &results {
                println!("{}", r.line());
            }
            let failed = results.iter().filter(|r| !r.passed).count();
            if failed > 0 {
                return Err(CliError::ChecksFailed(failed));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
