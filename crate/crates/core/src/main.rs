use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;

use optpart::config::{parse_config, CONFIG_HELP};
use optpart::experiment::{audit_only, run_experiment, RunOptions};
use optpart::Error;

/// Optimal k-phase spectral partitions under a measure budget.
#[derive(Parser, Debug)]
#[command(version, after_help = CONFIG_HELP)]
struct Cli {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for the manifest and artifacts.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of restarts.
    #[arg(long)]
    restarts: Option<usize>,
    /// Overrides the grid resolution.
    #[arg(long)]
    resolution: Option<usize>,
    /// Audit the phase dumps in this directory instead of solving.
    #[arg(long, value_name = "DIR")]
    audit_only: Option<PathBuf>,
    /// Run restarts concurrently.
    #[arg(long)]
    parallel: bool,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    err.downcast_ref::<Error>().map_or(1, Error::exit_code)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut config = parse_config(&cli.config).with_context(|| format!("reading {}", cli.config.display()))?;
    if let Some(s) = cli.seed {
        config.solver.seed = s;
    }
    if let Some(r) = cli.restarts {
        config.solver.restarts = r;
    }
    if let Some(r) = cli.resolution {
        config.solver.resolution = r;
    }
    if let Some(dir) = &cli.audit_only {
        let m = audit_only(&config, dir, &cli.out_dir)?;
        println!("audit: {}", if m.audit.all_ok() { "all checks passed" } else { "some checks failed" });
        return Ok(());
    }
    let m = run_experiment(&config, &cli.out_dir, RunOptions { parallel: cli.parallel })?;
    println!("best seed {}: objective {:.6}", m.best_seed, m.partition.objective);
    if let Some(o) = &m.oracle {
        println!("equal-ball prediction {:.6}, relative gap {:+.4}", o.prediction.total_objective, o.relative_gap);
    }
    println!("audit: {}", if m.audit.all_ok() { "all checks passed" } else { "some checks failed" });
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
