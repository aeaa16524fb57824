use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use varscale::config::{RunConfig, Stage};
use varscale::pipeline::{exit_code, run};
use varscale::vectorfield::ProblemRegistry;
use varscale::Result;

/// Malkin zeros, scaled bifurcation branches and their validation for
/// periodically forced limit cycles.
#[derive(Debug, Parser)]
#[command(name = "varscale", version)]
struct Cli {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated stages, overriding the configuration
    /// (cycle, malkin, scaling, validate).
    #[arg(long, value_delimiter = ',')]
    stage: Option<Vec<String>>,
    /// Output directory, overriding the configuration.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for random probes.
    #[arg(long)]
    seed: Option<u64>,
    /// Treat accuracy warnings as failures.
    #[arg(long)]
    strict: bool,
}

fn configure(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::from_path(&cli.config)?;
    if let Some(stages) = &cli.stage {
        cfg.stages = stages.iter().map(|s| Stage::parse(s)).collect::<Result<_>>()?;
        cfg.stages.sort();
        cfg.stages.dedup();
    }
    if let Some(out) = &cli.out {
        cfg.outputs = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.strict |= cli.strict;
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure(&cli).and_then(|cfg| run(&cfg, &ProblemRegistry::with_builtins()));
    match &result {
        Ok(outcome) => {
            for c in &outcome.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
        }
        Err(e) => eprintln!("error: {e}"),
    }
    ExitCode::from(exit_code(&result) as u8)
}
