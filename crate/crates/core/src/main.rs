use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use roar_eo::cli::{cmd_generate, cmd_report, cmd_roar, cmd_select, configure_workers, exit_code, RunConfig};

/// Remove-and-retrain feature selection for multivariate time series.
///
/// Worker threads: set ROAR_EO_WORKERS (default: one per core).
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Write the planted dataset of the [generate] section.
    Generate(RunArgs),
    /// Train the model grid and write the per-architecture table.
    Select(RunArgs),
    /// Run every deletion campaign of the [roar] section.
    Roar {
        #[command(flatten)]
        run: RunArgs,
        /// Continue from curves already in the output directory.
        #[arg(long)]
        resume: bool,
    },
    /// Summarize saved curve files.
    Report {
        #[arg(required = true)]
        curves: Vec<PathBuf>,
        /// Necessary-set floor as a fraction of the baseline metric.
        #[arg(long, default_value_t = 0.5)]
        floor: f64,
    },
}

fn run(cli: Cli) -> roar_eo::Result<()> {
    configure_workers()?;
    match cli.command {
        Command::Generate(a) => {
            let cfg = RunConfig::load(&a.config, a.seed)?;
            let dir = cmd_generate(&cfg, a.out.as_deref())?;
            println!("{}", dir.display());
        }
        Command::Select(a) => {
            let cfg = RunConfig::load(&a.config, a.seed)?;
            for row in cmd_select(&cfg, a.out.as_deref(), &|_| {})? {
                let score = row.validation.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                println!("{} {} validation {score} {}", row.rank, row.spec.architecture, row.note);
            }
        }
        Command::Roar { run, resume } => {
            let cfg = RunConfig::load(&run.config, run.seed)?;
            for path in cmd_roar(&cfg, run.out.as_deref(), resume)? {
                println!("{}", path.display());
            }
        }
        Command::Report { curves, floor } => print!("{}", cmd_report(&curves, floor)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
