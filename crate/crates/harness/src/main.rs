use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use maxmargin_harness::selftest::run_selftest;
use maxmargin_harness::{run, ExperimentConfig, Leg};

#[derive(Parser)]
#[command(name = "maxmargin", version, about = "Max-margin asymptotics and simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config and MAXMARGIN_OUT.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Base seed; replaces any explicit seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Gauss–Legendre points per panel of the Gaussian rule.
    #[arg(long, global = true)]
    quad_order: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Asymptotic predictions only.
    Predict,
    /// Finite-n simulations only.
    Simulate,
    /// Predictions, simulations and their comparison.
    Experiment,
    /// Fast invariant battery.
    Selftest,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let leg = match cli.command {
        Command::Selftest => {
            let checks = run_selftest();
            let mut ok = true;
            for c in &checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
                ok &= c.passed;
            }
            return if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE };
        }
        Command::Predict => Leg::Predict,
        Command::Simulate => Leg::Simulate,
        Command::Experiment => Leg::Both,
    };
    let Some(path) = cli.config else {
        eprintln!("error: --config is required");
        return ExitCode::FAILURE;
    };
    let mut cfg = match ExperimentConfig::load(&path) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    if let Some(seed) = cli.seed {
        cfg.sim.base_seed = seed;
        cfg.sim.seeds = None;
    }
    if let Some(q) = cli.quad_order {
        cfg.numerics.quad_order = q;
    }
    let out = cli
        .out
        .or_else(|| std::env::var_os("MAXMARGIN_OUT").map(PathBuf::from))
        .or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("results"));
    match run(&cfg, leg, &out, cli.workers) {
        Ok(outcome) => {
            for f in &outcome.files {
                println!("wrote {}", f.display());
            }
            if let Some(cmp) = &outcome.comparison {
                let flag = cmp.column("flag").unwrap_or(0);
                let bad = cmp.rows.iter().filter(|r| r[flag] == "exceeds").count();
                println!("{} grid points compared, {bad} beyond tolerance", cmp.rows.len());
            }
            if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                for f in &outcome.failures {
                    eprintln!("failed: {f}");
                }
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
