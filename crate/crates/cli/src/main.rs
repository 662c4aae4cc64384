//! `avm`: batch runs of the lattice, slow-flow, Melnikov and persistence
//! analyses from a TOML config.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use config::{config_error, ConfigError};
use output::Sink;

#[derive(Parser)]
#[command(name = "avm", version, about = "Forced acoustic-vacuum lattice and Melnikov analyses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate the exact and/or reduced lattice.
    Lattice(RunArgs),
    /// Unforced slow-flow orbits, periods and phase portrait.
    Orbits(RunArgs),
    /// Melnikov table over a (beta1, rho) grid and its roots.
    Melnikov(RunArgs),
    /// Shooting for the forced periodic orbit over an eps sweep.
    Persist(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long)]
    threads: Option<usize>,
}

fn run(cli: Cli) -> anyhow::Result<commands::Outcome> {
    let (name, args, func): (&'static str, RunArgs, fn(&config::RunConfig, &Sink) -> anyhow::Result<commands::Outcome>) =
        match cli.command {
            Command::Lattice(a) => ("lattice", a, commands::lattice::run),
            Command::Orbits(a) => ("orbits", a, commands::orbits::run),
            Command::Melnikov(a) => ("melnikov", a, commands::melnikov::run),
            Command::Persist(a) => ("persist", a, commands::persist::run),
        };
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(format!("cannot size the thread pool: {e}")))?;
    }
    let loaded = config::load(&args.config)?;
    output::ensure_dir(&args.out)?;
    let sink = Sink {
        dir: args.out,
        sha256: loaded.sha256,
        command: name,
    };
    func(&loaded.config, &sink)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for f in &outcome.files {
                println!("{}", f.display());
            }
            if !outcome.warnings.is_empty() {
                eprintln!("{} warning(s)", outcome.warnings.len());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
