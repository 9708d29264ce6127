//! The Monte-Carlo bundle: `K` sampled path tuples, their bilevel optima
//! and the noise draws that turn path values into pseudo-observations.

use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::Models;
use crate::bilevel::{
    product_grid, sample_from_tables, solve_bilevel_continuous, solve_tables_constrained, ContinuousOptions,
    GridSpec, OptimumSample,
};
use crate::error::{Error, Result};
use crate::gp::GpModel;
use crate::path::{draw_feature_map, draw_path, FeatureMap, PathSample, Surface};
use crate::rng::{stream, tag, Stream};

/// Where the sampled bilevel problems are solved.
#[derive(Debug, Clone)]
pub enum Domain {
    Pool(GridSpec),
    Continuous(ContinuousOptions),
}

#[derive(Debug, Clone)]
pub struct BundleOptions {
    pub samples: usize,
    pub rff_dim: usize,
    /// One feature map per modeled function for all samples instead of a
    /// fresh map per sample.
    pub shared_map: bool,
    pub domain: Domain,
}

/// Path values of one sample on the pool, `x × θ`, and the sampled
/// inner argmax index per grid `x`.
#[derive(Debug, Clone)]
pub struct SampleTables {
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub cu: Vec<DMatrix<f64>>,
    pub cl: Vec<DMatrix<f64>>,
    pub inner: Vec<usize>,
}

/// One draw of `Ω`: paths, their optimum, and standard-normal noise that
/// is scaled by each function's noise level when a pseudo-observation is
/// formed.
#[derive(Debug, Clone)]
pub struct McSample {
    pub optimum: OptimumSample,
    pub f: PathSample,
    pub g: PathSample,
    pub cu: Vec<PathSample>,
    pub cl: Vec<PathSample>,
    pub eps_f: f64,
    pub eps_g: f64,
    pub eps_cu: Vec<f64>,
    pub eps_cl: Vec<f64>,
    pub tables: Option<SampleTables>,
}

#[derive(Debug, Clone)]
pub struct McBundle {
    pub samples: Vec<McSample>,
    pub domain: Domain,
    pub dim_x: usize,
    pub dim_theta: usize,
    /// Noise variances used for the pseudo-observations.
    pub noise_f: f64,
    pub noise_g: f64,
    pub noise_cu: Vec<f64>,
    pub noise_cl: Vec<f64>,
    /// θ points seeding inner solves in continuous mode.
    pub theta_seeds: Vec<Vec<f64>>,
}

impl McBundle {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn has_constraints(&self) -> bool {
        !(self.noise_cu.is_empty() && self.noise_cl.is_empty())
    }
}

struct SharedMaps {
    f: Arc<FeatureMap>,
    g: Arc<FeatureMap>,
    cu: Vec<Arc<FeatureMap>>,
    cl: Vec<Arc<FeatureMap>>,
}

fn map_for(model: &GpModel, d: usize, dim: usize, rng: &mut Stream) -> Arc<FeatureMap> {
    Arc::new(draw_feature_map(model.hyper(), d, dim, rng))
}

fn draw_one(
    model: &GpModel,
    shared: Option<&Arc<FeatureMap>>,
    opts: &BundleOptions,
    dim_x: usize,
    dim: usize,
    rng: &mut Stream,
) -> Result<PathSample> {
    let map = match shared {
        Some(m) => Arc::clone(m),
        None => map_for(model, opts.rff_dim, dim, rng),
    };
    draw_path(model, map, dim_x, rng)
}

fn all_nonnegative(tables: &[DMatrix<f64>], i: usize, j: usize) -> bool {
    tables.iter().all(|t| t[(i, j)] >= 0.0)
}

fn build_sample(
    models: &Models,
    opts: &BundleOptions,
    shared: Option<&SharedMaps>,
    dim_x: usize,
    dim: usize,
    rng: &mut Stream,
) -> Result<McSample> {
    let f = draw_one(&models.f, shared.map(|s| &s.f), opts, dim_x, dim, rng)?;
    let g = draw_one(&models.g, shared.map(|s| &s.g), opts, dim_x, dim, rng)?;
    let eps_f: f64 = rng.sample(StandardNormal);
    let eps_g: f64 = rng.sample(StandardNormal);
    let mut cu = Vec::with_capacity(models.cu.len());
    for (n, m) in models.cu.iter().enumerate() {
        cu.push(draw_one(m, shared.map(|s| &s.cu[n]), opts, dim_x, dim, rng)?);
    }
    let mut cl = Vec::with_capacity(models.cl.len());
    for (n, m) in models.cl.iter().enumerate() {
        cl.push(draw_one(m, shared.map(|s| &s.cl[n]), opts, dim_x, dim, rng)?);
    }
    let eps_cu: Vec<f64> = cu.iter().map(|_| rng.sample(StandardNormal)).collect();
    let eps_cl: Vec<f64> = cl.iter().map(|_| rng.sample(StandardNormal)).collect();

    let (optimum, tables) = match &opts.domain {
        Domain::Pool(grid) => {
            let ft = f.table(&grid.x_grid, &grid.theta_grid);
            let gt = g.table(&grid.x_grid, &grid.theta_grid);
            let cut: Vec<_> = cu.iter().map(|p| p.table(&grid.x_grid, &grid.theta_grid)).collect();
            let clt: Vec<_> = cl.iter().map(|p| p.table(&grid.x_grid, &grid.theta_grid)).collect();
            let (ix, inner) = solve_tables_constrained(
                &ft,
                &gt,
                &|i, j| all_nonnegative(&clt, i, j),
                &|i, j| all_nonnegative(&cut, i, j),
            );
            let opt = sample_from_tables(&ft, &gt, grid, ix, inner[ix]);
            let tables = SampleTables {
                f: ft,
                g: gt,
                cu: cut,
                cl: clt,
                inner,
            };
            (opt, Some(tables))
        }
        Domain::Continuous(copts) => {
            if !(cu.is_empty() && cl.is_empty()) {
                return Err(Error::Usage("constrained acquisition is pool-only".into()));
            }
            (solve_bilevel_continuous(&f, &g, copts, rng), None)
        }
    };
    Ok(McSample {
        optimum,
        f,
        g,
        cu,
        cl,
        eps_f,
        eps_g,
        eps_cu,
        eps_cl,
        tables,
    })
}

/// Builds `K` samples. Sample `k` draws only from the stream
/// `(seed, ITERATION, iteration, BUNDLE, k)`, so the bundle does not depend
/// on thread scheduling.
pub fn build_bundle(
    models: &Models,
    opts: &BundleOptions,
    dim_x: usize,
    dim_theta: usize,
    seed: u64,
    iteration: u64,
) -> Result<McBundle> {
    if opts.samples == 0 || opts.rff_dim == 0 {
        return Err(Error::Usage("bundle needs K ≥ 1 samples and at least one feature".into()));
    }
    let dim = dim_x + dim_theta;
    let shared = if opts.shared_map {
        let mut rng = stream(seed, &[tag::ITERATION, iteration, tag::BUNDLE, u64::MAX]);
        let d = opts.rff_dim;
        Some(SharedMaps {
            f: map_for(&models.f, d, dim, &mut rng),
            g: map_for(&models.g, d, dim, &mut rng),
            cu: models.cu.iter().map(|m| map_for(m, d, dim, &mut rng)).collect(),
            cl: models.cl.iter().map(|m| map_for(m, d, dim, &mut rng)).collect(),
        })
    } else {
        None
    };
    let samples = (0..opts.samples)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, &[tag::ITERATION, iteration, tag::BUNDLE, k as u64]);
            build_sample(models, opts, shared.as_ref(), dim_x, dim, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    let theta_seeds = match &opts.domain {
        Domain::Pool(_) => Vec::new(),
        Domain::Continuous(c) => product_grid(c.seed_grid.max(2), dim_theta),
    };
    Ok(McBundle {
        samples,
        domain: opts.domain.clone(),
        dim_x,
        dim_theta,
        noise_f: models.f.hyper().noise_variance,
        noise_g: models.g.hyper().noise_variance,
        noise_cu: models.cu.iter().map(|m| m.hyper().noise_variance).collect(),
        noise_cl: models.cl.iter().map(|m| m.hyper().noise_variance).collect(),
        theta_seeds,
    })
}
