use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pm_robopt::{parse_config, run_command, Command, RunConfig};

/// Robust, drive-cycle-aware magnet sizing for permanent-magnet machines.
#[derive(Debug, Parser)]
#[command(name = "pm-robopt", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// TOML configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory, overriding the configuration.
    #[arg(long, env = "PM_ROBOPT_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match parse_config(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.output.dir = out;
    }
    if let Some(seed) = cli.seed {
        cfg.solver.seed = seed;
    }
    if let Some(workers) = cli.workers {
        cfg.solver.workers = workers;
    }
    let out = cfg.output.dir.clone();
    match run_command(&cfg, cli.command, &out) {
        Ok(m) => {
            for s in &m.stages {
                eprintln!("{:<16} {:>9.3} s", s.name, s.seconds);
            }
            eprintln!("wrote {} files to {}", m.files.len(), out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
