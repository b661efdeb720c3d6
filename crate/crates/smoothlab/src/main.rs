use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use smoothlab::{parse_seed, presets, run_and_write, RunOptions, Verb};

/// Smoothing estimates, spectral identities and best constants for operator models.
#[derive(Parser, Debug)]
#[command(name = "smoothlab", version)]
struct Cli {
    verb: Verb,
    /// Scenario file (JSON, `"schema": "smoothlab/v1"`).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named scenario; see `list-presets`.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (default: the config's `output_dir`, else `smoothlab-out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed for the random batches (default 0xC0FFEE).
    #[arg(long, value_parser = parse_seed)]
    seed: Option<u64>,
    #[arg(long, env = "SMOOTHLAB_THREADS")]
    threads: Option<usize>,
    /// Multiplies every tolerance of the scenario.
    #[arg(long, default_value_t = 1.0)]
    tolerance_scale: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if cli.verb == Verb::ListPresets {
        print!("{}", presets::catalog());
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cli.threads {
        if n == 0 || rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            eprintln!("configuration error: cannot start {n} worker threads");
            return ExitCode::from(2);
        }
    }
    let opts = RunOptions {
        verb: cli.verb,
        config: cli.config,
        preset: cli.preset,
        out: cli.out,
        seed: cli.seed,
        tolerance_scale: cli.tolerance_scale,
    };
    match run_and_write(&opts, rayon::current_num_threads()) {
        Ok(outcome) => {
            for c in &outcome.report.checks {
                let verdict = if c.pass { "PASS" } else { "FAIL" };
                let fmt = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{v:.6e}"));
                println!("{verdict} {:<28} lhs={} rhs={} residual={}", c.name, fmt(c.lhs), fmt(c.rhs), fmt(c.residual));
                if let Some(n) = &c.note {
                    println!("     {n}");
                }
            }
            println!("outputs in {}", outcome.out_dir.display());
            ExitCode::from(outcome.exit_code())
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
