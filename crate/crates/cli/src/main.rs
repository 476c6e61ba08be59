//! `slowmf`: runs the noise, manifold, tracking, estimation and diagnostic
//! experiments from a config file and writes CSV/JSON plus a hashed manifest.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::output::Sink;

#[derive(Parser)]
#[command(
    name = "slowmf",
    version,
    about = "Random slow manifolds and their Wong-Zakai approximation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// TOML config (JSON accepted).
    #[arg(long)]
    config: PathBuf,
    /// Base seed; overrides the config.
    #[arg(long, env = "SLOWMF_SEED")]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, env = "SLOWMF_OUT")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Brownian, O-U and integrated O-U sample paths with their gap.
    Paths(Common),
    /// Manifold graphs, their evolution under the shift and invariance checks.
    Manifold(Common),
    /// Rate tables in the correlation time.
    Converge(Common),
    /// Tracking gap between the white-noise system and manifold orbits.
    Track(Common),
    /// Parameter estimation through the reduced system.
    Estimate(Common),
    /// Non-uniformity diagnostic in the scale parameter.
    Diagnose(Common),
}

impl Command {
    fn parts(&self) -> (&'static str, &Common) {
        match self {
            Command::Paths(c) => ("paths", c),
            Command::Manifold(c) => ("manifold", c),
            Command::Converge(c) => ("converge", c),
            Command::Track(c) => ("track", c),
            Command::Estimate(c) => ("estimate", c),
            Command::Diagnose(c) => ("diagnose", c),
        }
    }
}

/// 2 for configuration and usage, 3 for violated assumptions, 4 for numerical failure.
fn exit_code(err: &anyhow::Error) -> u8 {
    use slowmf::Error as E;
    match err.downcast_ref::<E>() {
        Some(E::Precondition(_) | E::Assumption(_)) => 3,
        Some(E::Divergence { .. } | E::NonConvergence { .. }) => 4,
        _ => 2,
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let (name, common) = cli.command.parts();
    let cfg: RunConfig = config::load(&common.config)?;
    let seed = common.seed.or(cfg.seed);
    let out = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut sink = Sink::new(&out, cfg.format)?;
    match cli.command {
        Command::Paths(_) => commands::paths(&cfg, seed, &mut sink)?,
        Command::Manifold(_) => commands::manifold(&cfg, seed, &mut sink)?,
        Command::Converge(_) => commands::converge(&cfg, seed, &mut sink)?,
        Command::Track(_) => commands::track(&cfg, seed, &mut sink)?,
        Command::Estimate(_) => {
            let secs = commands::estimate(&cfg, seed, &mut sink)?;
            eprintln!("wall_seconds: {secs:.3}");
        }
        Command::Diagnose(_) => commands::diagnose(&cfg, seed, &mut sink)?,
    }
    let resolved = RunConfig {
        seed,
        output_dir: Some(out),
        ..cfg
    };
    let manifest = sink.finish(name, seed, &resolved)?;
    eprintln!("wrote {}", manifest.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
