//! `bljes`: runs bilevel BO experiments and writes regret CSVs.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use bljes_core::runner::{emit_results, problem_for, run_experiment, RunConfig, MANIFEST_FILE, SUMMARY_FILE};
use clap::Parser;

/// Bilevel Bayesian optimization by lower-bound joint entropy search.
///
/// Settings come from the defaults, then `--config`, then the flags.
#[derive(Debug, Parser)]
#[command(name = "bljes", version)]
struct Cli {
    /// Flat key=value config file.
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Problem name with optional parameters, e.g. `gp-prior:lU=0.25,lL=0.25,seed=3`.
    #[arg(long)]
    problem: Option<String>,
    /// bljes or random.
    #[arg(long)]
    method: Option<String>,
    /// coupled, decoupled or constrained.
    #[arg(long)]
    mode: Option<String>,
    /// BO iterations after the initial design.
    #[arg(long)]
    iters: Option<usize>,
    /// A count (`10`), a range (`3..7`) or a list (`1,4,9`).
    #[arg(long)]
    seeds: Option<String>,
    /// Monte-Carlo samples per iteration.
    #[arg(long = "k-samples")]
    k_samples: Option<usize>,
    /// Random Fourier features per sampled path.
    #[arg(long = "rff-dim")]
    rff_dim: Option<usize>,
    /// Observation noise standard deviation for both levels.
    #[arg(long = "noise-std")]
    noise_std: Option<f64>,
    /// Pool points per dimension.
    #[arg(long)]
    grid: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial design size.
    #[arg(long)]
    n0: Option<usize>,
    /// pool or continuous.
    #[arg(long)]
    domain: Option<String>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Print the resolved config and exit.
    #[arg(long)]
    dry_run: bool,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut config = RunConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        config.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    let flags: [(&str, Option<String>); 12] = [
        ("problem", cli.problem.clone()),
        ("method", cli.method.clone()),
        ("mode", cli.mode.clone()),
        ("iters", cli.iters.map(|v| v.to_string())),
        ("seeds", cli.seeds.clone()),
        ("k_samples", cli.k_samples.map(|v| v.to_string())),
        ("rff_dim", cli.rff_dim.map(|v| v.to_string())),
        ("noise_std", cli.noise_std.map(|v| v.to_string())),
        ("grid", cli.grid.map(|v| v.to_string())),
        ("out", cli.out.as_ref().map(|p| p.display().to_string())),
        ("n0", cli.n0.map(|v| v.to_string())),
        ("domain", cli.domain.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            config.set(k, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{kv}`"))?;
        config.set(k, v)?;
    }
    config.validate()?;
    problem_for(&config, config.seeds[0])?;
    Ok(config)
}

fn run(cli: &Cli) -> Result<bool> {
    let config = resolve(cli)?;
    if cli.dry_run {
        print!("{}", config.to_text());
        return Ok(true);
    }
    log::info!(
        "{} / {} on {} for {} seeds",
        config.method.as_str(),
        bljes_core::runner::mode_name(config.mode),
        config.problem,
        config.seeds.len()
    );
    let results = run_experiment(&config)?;
    emit_results(&results, &config)?;
    let mut ok = true;
    for (seed, r) in config.seeds.iter().zip(&results) {
        match r {
            Ok(r) => {
                let fb = r.fallback_iterations.len();
                println!("seed {seed}: final regret {:.6}, {fb} fallback iterations", r.final_regret());
            }
            Err(e) => {
                ok = false;
                eprintln!("seed {seed}: failed: {e}");
            }
        }
    }
    println!(
        "wrote {} and {} to {}",
        SUMMARY_FILE,
        MANIFEST_FILE,
        config.output_dir.display()
    );
    Ok(ok)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
