use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use fermion_clt::config::ExperimentConfig;
use fermion_clt::experiments::{run, Subcommand};

/// Run a named experiment from a TOML config and write CSV/JSON artifacts.
#[derive(Parser)]
#[command(version)]
struct Cli {
    /// spectrum, variance, clt, sample, szego, toeplitz, multicut or all
    subcommand: Subcommand,
    #[arg(long)]
    config: PathBuf,
    /// Output root; defaults to the config's `output` or `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the sampler and multicut seeds.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match ExperimentConfig::load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let cfg = match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    };
    let out = cli.out.or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    match run(cli.subcommand, &cfg, &out) {
        Ok(report) => {
            for c in &report.criteria {
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                println!("{verdict} {} measured={:e} threshold={:e}", c.criterion_id, c.measured, c.threshold);
            }
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(3)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
