use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use srghn::experiment::{self, ExportKind, RunConfig, SuiteConfig, PRESETS};

/// Self-referential GHN experiments.
///
/// `SRGHN_OUT_DIR` overrides the output root and `SRGHN_THREADS` the number
/// of evaluation threads.
#[derive(Parser)]
#[command(name = "srghn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run (or resume) one evolution run.
    Run {
        /// TOML config file, or a preset name (`preset:<name>` also works).
        #[arg(long)]
        config: String,
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to `<out root>/<name>/seed-<seed>`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the number of generations.
        #[arg(long)]
        generations: Option<u64>,
    },
    /// Write plot-ready data for a finished or checkpointed run.
    Export {
        #[arg(long)]
        run: PathBuf,
        /// curves, genealogy, lineage, boxplot or all.
        #[arg(long, default_value = "all")]
        what: ExportKind,
    },
    /// Run a multi-seed comparison suite and write the combined report.
    Bench {
        #[arg(long)]
        suite: PathBuf,
        /// Output root; the suite writes into `<out>/<suite name>`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets, or print one as TOML.
    Presets { name: Option<String> },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run {
            config,
            seed,
            out,
            generations,
        } => {
            let mut cfg = RunConfig::load(std::path::Path::new(&config)).with_context(|| format!("loading `{config}`"))?;
            if seed.is_some() {
                cfg.run_seed = seed;
            }
            if generations.is_some() {
                cfg.generations = generations;
            }
            let resolved = cfg.resolve()?;
            let dir = out.unwrap_or_else(|| experiment::default_run_dir(&resolved));
            log::info!("{} ({}) -> {}", resolved.name, resolved.algorithm.id(), dir.display());
            let output = experiment::run(&resolved, &dir)?;
            if let Some(last) = output.metrics.last() {
                println!(
                    "{}: generation {} best {} mean {}",
                    dir.display(),
                    last.generation,
                    last.best_fitness,
                    last.mean_fitness
                );
            }
        }
        Command::Export { run, what } => {
            for path in experiment::export(&run, what)? {
                println!("{}", path.display());
            }
        }
        Command::Bench { suite, out } => {
            let cfg = SuiteConfig::load(&suite).with_context(|| format!("loading `{}`", suite.display()))?;
            let output = experiment::run_suite(&cfg, &suite, out.as_deref())?;
            println!("{}", output.dir.display());
            print!("{}", std::fs::read_to_string(output.dir.join("recovery.md"))?);
        }
        Command::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
        }
        Command::Presets { name: Some(name) } => {
            print!("{}", RunConfig::preset(&name)?.to_toml_string()?);
        }
    }
    Ok(())
}
