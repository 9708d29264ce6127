//! The experiment loop: fit, sample, solve, acquire, observe, record.

mod config;
mod output;

pub use config::{mode_name, parse_mode, parse_seeds, DomainMode, Method, RunConfig};
pub use output::{emit_results, quantile, summarize, SummaryRow, RUN_FILE_PREFIX, SUMMARY_FILE, MANIFEST_FILE};

use std::time::Instant;

use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::acquisition::{
    build_bundle, select_continuous, select_pool, AcqMode, BundleOptions, Choice, Domain, Level, Models, PoolContext,
    PoolScorer,
};
use crate::benchmarks::{compute_ground_truth, make_problem, parse_problem, BenchmarkSpec, GroundTruth};
use crate::bilevel::{ContinuousOptions, GridSpec};
use crate::error::{Error, Result};
use crate::gp::{fit_hyperparameters, Dataset, GpHyperparams, GpModel, ObservationRecord, QueryPoint, Target};
use crate::regret::RegretTrace;
use crate::rng::{stream, tag, Stream};

/// One observed query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    /// 0 for the initial design, then 1..=iterations.
    pub iteration: usize,
    pub point: QueryPoint,
    pub level: Level,
    pub y_f: Option<f64>,
    pub y_g: Option<f64>,
    pub y_cu: Option<Vec<f64>>,
    pub y_cl: Option<Vec<f64>>,
    /// Chosen at random after the acquisition step failed.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub dim_x: usize,
    pub dim_theta: usize,
    pub queries: Vec<QueryRecord>,
    pub trace: RegretTrace,
    /// Wall-clock seconds per BO iteration.
    pub iteration_seconds: Vec<f64>,
    /// Iterations whose query came from the random fallback.
    pub fallback_iterations: Vec<usize>,
    /// True function evaluations per level.
    pub evaluations_f: usize,
    pub evaluations_g: usize,
}

impl RunResult {
    /// Running-minimum regret after the last query of each iteration
    /// `0..=iterations`.
    pub fn regret_by_iteration(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        for e in &self.trace.entries {
            if e.iteration < out.len() {
                out[e.iteration] = e.cumulative_min_regret;
            } else {
                out.push(e.cumulative_min_regret);
            }
        }
        out
    }

    pub fn final_regret(&self) -> f64 {
        self.trace.final_regret().unwrap_or(f64::NAN)
    }
}

/// Builds the problem for one seed. A `gp-prior` without an explicit
/// `seed` parameter draws its functions from the run seed.
pub fn problem_for(config: &RunConfig, seed: u64) -> Result<BenchmarkSpec> {
    let (name, mut params) = parse_problem(&config.problem)?;
    if let Some(g) = config.grid {
        params.insert("grid".into(), g.to_string());
    }
    make_problem(&name, &params, seed)
}

/// Points per dimension of the continuous-mode reference grid.
pub fn reference_points_per_dim(dim: usize) -> usize {
    if dim <= 2 {
        200
    } else {
        30
    }
}

/// Ground truth on the pool, or on the dense reference grid in continuous
/// mode.
pub fn ground_truth_for(spec: &BenchmarkSpec, domain: DomainMode) -> GroundTruth {
    match domain {
        DomainMode::Pool => compute_ground_truth(spec),
        DomainMode::Continuous => {
            let n = reference_points_per_dim(spec.dim_x + spec.dim_theta);
            compute_ground_truth(&spec.clone().with_grid(n))
        }
    }
}

/// A uniform pool point; in decoupled mode the level is uniform over
/// `{f, g}` as well.
pub fn baseline_random<R: Rng + ?Sized>(ctx: &PoolContext, mode: AcqMode, rng: &mut R) -> Result<Choice> {
    if ctx.is_empty() {
        return Err(Error::Usage("empty pool".into()));
    }
    let i = rng.random_range(0..ctx.len());
    Ok(Choice {
        pool_index: Some(i),
        point: ctx.query_point(i),
        level: random_level(mode, rng),
        value: f64::NAN,
    })
}

/// A uniform point of the unit cube, for continuous mode.
pub fn random_continuous<R: Rng + ?Sized>(dim_x: usize, dim_theta: usize, mode: AcqMode, rng: &mut R) -> Choice {
    let x: Vec<f64> = (0..dim_x).map(|_| rng.random()).collect();
    let theta: Vec<f64> = (0..dim_theta).map(|_| rng.random()).collect();
    Choice {
        pool_index: None,
        point: QueryPoint::new(x, theta),
        level: random_level(mode, rng),
        value: f64::NAN,
    }
}

fn random_level<R: Rng + ?Sized>(mode: AcqMode, rng: &mut R) -> Level {
    match mode {
        AcqMode::Decoupled if rng.random_bool(0.5) => Level::Lower,
        AcqMode::Decoupled => Level::Upper,
        _ => Level::Both,
    }
}

struct NoiseStreams {
    f: Stream,
    g: Stream,
    cu: Stream,
    cl: Stream,
}

impl NoiseStreams {
    fn new(seed: u64) -> Self {
        NoiseStreams {
            f: stream(seed, &[tag::NOISE_F]),
            g: stream(seed, &[tag::NOISE_G]),
            cu: stream(seed, &[tag::NOISE_CU]),
            cl: stream(seed, &[tag::NOISE_CL]),
        }
    }
}

fn noisy(value: f64, sd: f64, rng: &mut Stream) -> f64 {
    let e: f64 = rng.sample(StandardNormal);
    value + sd * e
}

struct Observer<'a> {
    spec: &'a BenchmarkSpec,
    config: &'a RunConfig,
    noise: NoiseStreams,
    evaluations_f: usize,
    evaluations_g: usize,
}

impl Observer<'_> {
    /// Evaluates the requested level(s) once and adds observation noise.
    /// Upper constraints travel with `f`, lower ones with `g`.
    fn observe(&mut self, point: &QueryPoint, level: Level, iteration: usize, fallback: bool) -> QueryRecord {
        let v = self.spec.evaluate(point);
        let (sf, sg) = (self.config.noise_std_f, self.config.noise_std_g);
        let upper = level != Level::Lower;
        let lower = level != Level::Upper;
        let mut rec = QueryRecord {
            iteration,
            point: point.clone(),
            level,
            y_f: None,
            y_g: None,
            y_cu: None,
            y_cl: None,
            fallback,
        };
        if upper {
            self.evaluations_f += 1;
            rec.y_f = Some(noisy(v.f, sf, &mut self.noise.f));
            if !v.cu.is_empty() {
                rec.y_cu = Some(v.cu.iter().map(|c| noisy(*c, sf, &mut self.noise.cu)).collect());
            }
        }
        if lower {
            self.evaluations_g += 1;
            rec.y_g = Some(noisy(v.g, sg, &mut self.noise.g));
            if !v.cl.is_empty() {
                rec.y_cl = Some(v.cl.iter().map(|c| noisy(*c, sg, &mut self.noise.cl)).collect());
            }
        }
        rec
    }
}

/// Refits one target and returns its model. The previous hyperparameters
/// seed the fit and are kept when it fails.
fn fit_target(dataset: &Dataset, target: Target, previous: &mut Option<GpHyperparams>) -> Result<GpModel> {
    let (points, targets) = dataset.real_observations(target);
    if points.is_empty() {
        return Err(Error::Numeric(format!("no observations for {target:?}")));
    }
    let init = previous.unwrap_or_else(|| GpHyperparams::initial_for(&targets));
    let fit = fit_hyperparameters(&points, &targets, &init);
    let hyper = if fit.fell_back || !fit.hyper.is_valid() { init } else { fit.hyper };
    *previous = Some(hyper);
    GpModel::from_training_set(hyper, dataset.training_set(target, hyper.noise_variance))
}

struct Hypers {
    f: Option<GpHyperparams>,
    g: Option<GpHyperparams>,
    cu: Vec<Option<GpHyperparams>>,
    cl: Vec<Option<GpHyperparams>>,
}

fn fit_models(dataset: &Dataset, hypers: &mut Hypers, constrained: bool) -> Result<Models> {
    let f = fit_target(dataset, Target::Upper, &mut hypers.f)?;
    let g = fit_target(dataset, Target::Lower, &mut hypers.g)?;
    let (mut cu, mut cl) = (Vec::new(), Vec::new());
    if constrained {
        for (n, h) in hypers.cu.iter_mut().enumerate() {
            cu.push(fit_target(dataset, Target::UpperConstraint(n), h)?);
        }
        for (m, h) in hypers.cl.iter_mut().enumerate() {
            cl.push(fit_target(dataset, Target::LowerConstraint(m), h)?);
        }
    }
    Ok(Models { f, g, cu, cl })
}

fn record_to_observation(r: &QueryRecord) -> ObservationRecord {
    ObservationRecord {
        point: r.point.clone(),
        y_f: r.y_f,
        y_g: r.y_g,
        y_cu: r.y_cu.clone(),
        y_cl: r.y_cl.clone(),
    }
}

/// One BLJES selection step.
fn acquire(
    config: &RunConfig,
    spec: &BenchmarkSpec,
    ctx: Option<&PoolContext>,
    dataset: &Dataset,
    hypers: &mut Hypers,
    seed: u64,
    iteration: usize,
) -> Result<Choice> {
    let constrained = config.mode == AcqMode::Constrained && spec.is_constrained();
    let models = fit_models(dataset, hypers, constrained)?;
    let domain = match ctx {
        Some(c) => Domain::Pool(c.grid.clone()),
        None => Domain::Continuous(ContinuousOptions::default()),
    };
    let opts = BundleOptions {
        samples: config.k_samples,
        rff_dim: config.rff_dim,
        shared_map: config.shared_map,
        domain,
    };
    let bundle = build_bundle(&models, &opts, spec.dim_x, spec.dim_theta, seed, iteration as u64)?;
    match ctx {
        Some(c) => {
            let scores = PoolScorer::new(c, &models, constrained)?.scores(&bundle)?;
            select_pool(&scores, c, config.mode)
        }
        None => {
            let mut rng = stream(seed, &[tag::ITERATION, iteration as u64, tag::STARTS]);
            select_continuous(&models, &bundle, config.mode, &mut rng)
        }
    }
}

/// Runs one seed end to end.
pub fn run_seed(config: &RunConfig, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let spec = problem_for(config, seed)?;
    let gt = ground_truth_for(&spec, config.domain);
    let ctx = match config.domain {
        DomainMode::Pool => Some(PoolContext::new(spec.grid.clone())),
        DomainMode::Continuous => None,
    };
    let mut observer = Observer {
        spec: &spec,
        config,
        noise: NoiseStreams::new(seed),
        evaluations_f: 0,
        evaluations_g: 0,
    };

    let mut init_rng = stream(seed, &[tag::INIT]);
    let initial: Vec<QueryPoint> = match &ctx {
        Some(c) => {
            if config.n0 > c.len() {
                return Err(Error::Usage(format!("n0 = {} exceeds the pool size {}", config.n0, c.len())));
            }
            sample_indices(&mut init_rng, c.len(), config.n0)
                .into_iter()
                .map(|i| c.query_point(i))
                .collect()
        }
        None => (0..config.n0)
            .map(|_| random_continuous(spec.dim_x, spec.dim_theta, AcqMode::Coupled, &mut init_rng).point)
            .collect(),
    };

    let mut dataset = Dataset::new(config.n0);
    let mut queries = Vec::with_capacity(config.n0 + config.iterations);
    for p in &initial {
        let r = observer.observe(p, Level::Both, 0, false);
        dataset.push(record_to_observation(&r));
        queries.push(r);
    }

    let mut hypers = Hypers {
        f: None,
        g: None,
        cu: vec![None; spec.n_upper],
        cl: vec![None; spec.n_lower],
    };
    let mut iteration_seconds = Vec::with_capacity(config.iterations);
    let mut fallback_iterations = Vec::new();
    for t in 1..=config.iterations {
        let started = Instant::now();
        let chosen = match config.method {
            Method::Random => None,
            Method::Bljes => match acquire(config, &spec, ctx.as_ref(), &dataset, &mut hypers, seed, t) {
                Ok(c) => Some(c),
                Err(e) => {
                    log::warn!("seed {seed} iteration {t}: acquisition failed ({e}); querying at random");
                    fallback_iterations.push(t);
                    None
                }
            },
        };
        let fallback = chosen.is_none() && config.method == Method::Bljes;
        let choice = match chosen {
            Some(c) => c,
            None => {
                let mut rng = stream(seed, &[tag::ITERATION, t as u64, tag::RANDOM_QUERY]);
                match &ctx {
                    Some(c) => baseline_random(c, config.mode, &mut rng)?,
                    None => random_continuous(spec.dim_x, spec.dim_theta, config.mode, &mut rng),
                }
            }
        };
        let r = observer.observe(&choice.point, choice.level, t, fallback);
        dataset.push(record_to_observation(&r));
        queries.push(r);
        iteration_seconds.push(started.elapsed().as_secs_f64());
        log::debug!("seed {seed} iteration {t} done in {:.2}s", iteration_seconds[t - 1]);
    }

    let points: Vec<(usize, QueryPoint)> = queries.iter().map(|q| (q.iteration, q.point.clone())).collect();
    let trace = RegretTrace::from_points(&points, &spec, &gt, config.domain == DomainMode::Pool)?;
    Ok(RunResult {
        seed,
        dim_x: spec.dim_x,
        dim_theta: spec.dim_theta,
        queries,
        trace,
        iteration_seconds,
        fallback_iterations,
        evaluations_f: observer.evaluations_f,
        evaluations_g: observer.evaluations_g,
    })
}

/// Runs every seed, in parallel. The outer error is for an invalid config
/// or problem; a seed that fails on its own is reported in its slot.
pub fn run_experiment(config: &RunConfig) -> Result<Vec<Result<RunResult>>> {
    config.validate()?;
    problem_for(config, config.seeds[0])?;
    Ok(config.seeds.par_iter().map(|&s| run_seed(config, s)).collect())
}

/// Grid of the problem as it is used by `config`, for callers that need
/// the pool.
pub fn pool_grid(config: &RunConfig, seed: u64) -> Result<GridSpec> {
    Ok(problem_for(config, seed)?.grid)
}
