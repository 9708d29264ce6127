//! Result files: one CSV per run, a summary CSV and a manifest.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::config::{mode_name, RunConfig};
use super::{problem_for, RunResult};
use crate::error::{Error, Result};

pub const RUN_FILE_PREFIX: &str = "run_seed";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

/// Quantile with linear interpolation between order statistics
/// (position `q·(n−1)`). `sorted` must be ascending and non-empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub iteration: usize,
    pub runs: usize,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Median and quartiles of the regret across runs, per iteration.
pub fn summarize(results: &[&RunResult]) -> Vec<SummaryRow> {
    let curves: Vec<Vec<f64>> = results.iter().map(|r| r.regret_by_iteration()).collect();
    let len = curves.iter().map(Vec::len).max().unwrap_or(0);
    (0..len)
        .filter_map(|t| {
            let mut v: Vec<f64> = curves.iter().filter_map(|c| c.get(t).copied()).collect();
            if v.is_empty() {
                return None;
            }
            v.sort_by(f64::total_cmp);
            Some(SummaryRow {
                iteration: t,
                runs: v.len(),
                median: quantile(&v, 0.5),
                q25: quantile(&v, 0.25),
                q75: quantile(&v, 0.75),
            })
        })
        .collect()
}

fn opt(v: Option<f64>) -> String {
    v.map(|y| y.to_string()).unwrap_or_default()
}

fn csv_bytes(header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&header).map_err(csv_error)?;
    for row in rows {
        w.write_record(&row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}

fn run_csv(result: &RunResult, config: &RunConfig) -> Result<Vec<u8>> {
    let mut header: Vec<String> = ["problem", "method", "mode", "seed", "iter", "level"]
        .map(String::from)
        .to_vec();
    header.extend((0..result.dim_x).map(|i| format!("x{i}")));
    header.extend((0..result.dim_theta).map(|i| format!("theta{i}")));
    header.extend(["y_f", "y_g", "regret"].map(String::from));
    let rows = result.queries.iter().zip(&result.trace.entries).map(|(q, e)| {
        let mut row = vec![
            config.problem.clone(),
            config.method.as_str().to_string(),
            mode_name(config.mode).to_string(),
            result.seed.to_string(),
            q.iteration.to_string(),
            q.level.as_str().to_string(),
        ];
        row.extend(q.point.x.iter().chain(&q.point.theta).map(f64::to_string));
        row.extend([opt(q.y_f), opt(q.y_g), e.cumulative_min_regret.to_string()]);
        row
    });
    csv_bytes(header, rows)
}

fn summary_csv(rows: &[SummaryRow]) -> Result<Vec<u8>> {
    let header = ["iter", "runs", "median", "q25", "q75"].map(String::from).to_vec();
    csv_bytes(
        header,
        rows.iter().map(|r| {
            vec![
                r.iteration.to_string(),
                r.runs.to_string(),
                r.median.to_string(),
                r.q25.to_string(),
                r.q75.to_string(),
            ]
        }),
    )
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn manifest(results: &[Result<RunResult>], config: &RunConfig) -> Result<String> {
    let mut s = String::new();
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    for (k, v) in config.entries() {
        let _ = writeln!(s, "{k}={v}");
    }
    let spec = problem_for(config, config.seeds[0])?;
    let _ = writeln!(s, "problem.name={}", spec.name);
    let _ = writeln!(s, "problem.dim_x={}", spec.dim_x);
    let _ = writeln!(s, "problem.dim_theta={}", spec.dim_theta);
    let _ = writeln!(s, "problem.upper_constraints={}", spec.n_upper);
    let _ = writeln!(s, "problem.lower_constraints={}", spec.n_lower);
    let _ = writeln!(s, "problem.points_per_dim={}", spec.grid.points_per_dim);
    let _ = writeln!(s, "problem.transform={}", spec.transform.name());
    let _ = writeln!(s, "summary.center=median");
    let _ = writeln!(s, "summary.spread=quartiles, linear interpolation between order statistics");
    let _ = writeln!(s, "regret=running minimum over all queries, initial design included");
    let ok: Vec<u64> = results.iter().filter_map(|r| r.as_ref().ok().map(|r| r.seed)).collect();
    let failed: Vec<u64> = config
        .seeds
        .iter()
        .zip(results)
        .filter(|(_, r)| r.is_err())
        .map(|(s, _)| *s)
        .collect();
    let _ = writeln!(s, "runs.ok={}", join(&ok));
    let _ = writeln!(s, "runs.failed={}", join(&failed));
    for (seed, r) in config.seeds.iter().zip(results) {
        let spec = problem_for(config, *seed)?;
        let params: Vec<String> = spec.params.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "seed.{seed}.problem={}:{}", spec.name, params.join(","));
        match r {
            Ok(r) => {
                let _ = writeln!(s, "seed.{seed}.file={RUN_FILE_PREFIX}{seed}.csv");
                let _ = writeln!(s, "seed.{seed}.final_regret={}", r.final_regret());
                let _ = writeln!(s, "seed.{seed}.fallbacks={}", r.fallback_iterations.len());
                let _ = writeln!(s, "seed.{seed}.fallback_iterations={}", join(&r.fallback_iterations));
                let _ = writeln!(s, "seed.{seed}.evaluations_f={}", r.evaluations_f);
                let _ = writeln!(s, "seed.{seed}.evaluations_g={}", r.evaluations_g);
            }
            Err(e) => {
                let _ = writeln!(s, "seed.{seed}.error={}", e.to_string().replace('\n', " "));
            }
        }
    }
    Ok(s)
}

/// Writes the per-run CSVs, `summary.csv` and `manifest.txt` into the
/// configured output directory. `results` is indexed like `config.seeds`.
pub fn emit_results(results: &[Result<RunResult>], config: &RunConfig) -> Result<()> {
    if results.is_empty() || results.len() != config.seeds.len() {
        return Err(Error::Usage("one result per configured seed is required".into()));
    }
    let dir: &Path = &config.output_dir;
    fs::create_dir_all(dir)?;
    let ok: Vec<&RunResult> = results.iter().filter_map(|r| r.as_ref().ok()).collect();
    for r in &ok {
        fs::write(dir.join(format!("{RUN_FILE_PREFIX}{}.csv", r.seed)), run_csv(r, config)?)?;
    }
    fs::write(dir.join(SUMMARY_FILE), summary_csv(&summarize(&ok))?)?;
    fs::write(dir.join(MANIFEST_FILE), manifest(results, config)?)?;
    Ok(())
}
