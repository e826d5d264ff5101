use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use randstop::diffusion::model_catalog;
use randstop::experiment::{run, RawConfig, RunOptions};

/// Optimal and randomized stopping experiments.
#[derive(Debug, Parser)]
#[command(name = "randstop", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run an experiment and write its CSV table. Exits 0 iff every row passes.
    Run {
        config: PathBuf,
        /// Override the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// CSV destination; defaults to the config's output, then stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print per-stage diagnostics to stderr.
        #[arg(long)]
        trace: bool,
        /// Simulation worker threads (0 = all cores). Does not change results.
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Check a config without running it and list every violation.
    Validate {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List the built-in diffusion models.
    ListModels,
}

const EXIT_FAIL: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn load(path: &Path, seed: Option<u64>) -> Result<RawConfig> {
    let mut raw = RawConfig::load(path)?;
    if let Some(s) = seed {
        raw.set_seed(s);
    }
    Ok(raw)
}

fn execute(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::ListModels => {
            for (name, description) in model_catalog() {
                println!("{name:<22}{description}");
            }
            Ok(0)
        }
        Command::Validate { config, seed } => {
            let violations = load(&config, seed)?.validate();
            if violations.is_empty() {
                println!("{}: ok", config.display());
                return Ok(0);
            }
            for v in &violations {
                println!("{v}");
            }
            Ok(EXIT_FAIL)
        }
        Command::Run { config, seed, out, trace, workers } => {
            let cfg = match load(&config, seed)?.check() {
                Ok(cfg) => cfg,
                Err(violations) => {
                    for v in &violations {
                        eprintln!("{v}");
                    }
                    anyhow::bail!("{} is not a valid config", config.display());
                }
            };
            let report = run(&cfg, RunOptions { workers, trace })?;
            if trace {
                for line in &report.trace {
                    eprintln!("{line}");
                }
            }
            match out.or_else(|| cfg.output.clone()) {
                Some(path) => {
                    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                    }
                    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                    let mut w = BufWriter::new(file);
                    report.write_csv(&mut w)?;
                    w.flush()?;
                }
                None => report.write_csv(io::stdout().lock())?,
            }
            for line in report.summary() {
                eprintln!("{line}");
            }
            Ok(u8::try_from(report.exit_code()).unwrap_or(EXIT_FAIL))
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
