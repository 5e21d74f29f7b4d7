use clap::{Parser, Subcommand};
use cmanifold_cli::{run, Command, Config, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "cmanifold", version, about = "Center-manifold construction for multi-sheeted graphs")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
    /// INI configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and the manifest.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Seed for randomized diagnostics.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cells per axis of the base lattice.
    #[arg(long, global = true)]
    grid: Option<usize>,
    /// Finest dyadic level.
    #[arg(long = "max-level", global = true)]
    max_level: Option<u32>,
    /// Worker threads (0 = automatic).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Sub {
    /// Sample the scenario.
    Generate,
    /// Whitney decomposition and its validation.
    Refine,
    /// Glue the interpolating patches into the center manifold.
    BuildCm,
    /// Normal approximation over the center manifold.
    Normal,
    /// Stripe decompositions.
    Stripes,
    /// Full diagnostic suite; exits with 3 on any failing row.
    Verify,
    /// Fitted-constant tables.
    Report,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd = match cli.command {
        Sub::Generate => Command::Generate,
        Sub::Refine => Command::Refine,
        Sub::BuildCm => Command::BuildCm,
        Sub::Normal => Command::Normal,
        Sub::Stripes => Command::Stripes,
        Sub::Verify => Command::Verify,
        Sub::Report => Command::Report,
    };
    let Some(path) = cli.config else {
        eprintln!("config error: --config is required");
        return ExitCode::from(2);
    };
    let ov = Overrides { grid: cli.grid, max_level: cli.max_level, seed: cli.seed, threads: cli.threads };
    let cfg = match Config::load(&path, &ov) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cfg.pipeline.threads > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.pipeline.threads).build_global() {
            eprintln!("cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cmd, &cfg, &cli.out) {
        Ok(o) => {
            if let Some(fails) = o.manifest.summary.failed_rows {
                eprintln!("{}: {fails} failing rows", cmd.name());
            }
            eprintln!("{} artifacts written to {}", o.manifest.artifacts.len(), cli.out.display());
            ExitCode::from(o.exit_code as u8)
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
