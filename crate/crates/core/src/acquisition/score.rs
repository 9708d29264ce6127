//! Acquisition evaluation: a vectorized scorer over the whole pool, a
//! differentiable scorer at arbitrary points, and query selection.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use super::bundle::{Domain, McBundle, McSample};
use super::moments::{constrained_level_log_ratio, triad_moments, ConstraintStats, TriadStats, TruncatedMoments};
use super::Models;
use crate::bilevel::{inner_argmax_grid, inner_solve, theta_star_jacobian, GridSpec, OptimumSample};
use crate::dual::{Dual, DUAL_DIM};
use crate::error::{Error, Result};
use crate::gp::{GpModel, QueryPoint, Whitened, AUGMENT_JITTER};
use crate::optim::{maximize_in_box, shifted_halton, AscentOptions};
use crate::path::PathSample;

/// Which acquisition the loop uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcqMode {
    Coupled,
    Decoupled,
    Constrained,
}

/// Which level a query observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    Upper,
    Lower,
    Both,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Upper => "f",
            Level::Lower => "g",
            Level::Both => "both",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Choice {
    pub pool_index: Option<usize>,
    pub point: QueryPoint,
    pub level: Level,
    pub value: f64,
}

fn aug_noise(model: &GpModel) -> f64 {
    AUGMENT_JITTER + model.jitter()
}

fn sd_noise(var: f64) -> f64 {
    var.max(0.0).sqrt()
}

// ---------------------------------------------------------------- pool --

/// The candidate pool as flattened `(x, θ)` inputs, indexed like
/// [`GridSpec::index`].
#[derive(Debug, Clone)]
pub struct PoolContext {
    pub grid: GridSpec,
    pub points: Vec<Vec<f64>>,
}

impl PoolContext {
    pub fn new(grid: GridSpec) -> Self {
        let mut points = Vec::with_capacity(grid.pool_len());
        for x in &grid.x_grid {
            for t in &grid.theta_grid {
                let mut z = x.clone();
                z.extend_from_slice(t);
                points.push(z);
            }
        }
        PoolContext { grid, points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn query_point(&self, index: usize) -> QueryPoint {
        let (ix, it) = self.grid.split(index);
        QueryPoint::new(self.grid.x_grid[ix].clone(), self.grid.theta_grid[it].clone())
    }
}

/// Posterior means, variances and whitened kernel columns of one model on
/// every pool point.
#[derive(Debug, Clone)]
pub struct PoolPosterior {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// `L⁻¹ k(X, z)` per pool point, `n × P`.
    pub v: DMatrix<f64>,
}

impl PoolPosterior {
    pub fn new(model: &GpModel, ctx: &PoolContext) -> Result<Self> {
        let ws = model.whiten_many(&ctx.points)?;
        let mut v = DMatrix::zeros(model.n(), ws.len());
        for (c, w) in ws.iter().enumerate() {
            v.column_mut(c).copy_from(&w.v);
        }
        Ok(PoolPosterior {
            mean: ws.iter().map(|w| w.mean).collect(),
            var: ws.iter().map(|w| w.var).collect(),
            v,
        })
    }

    fn cov(&self, model: &GpModel, ctx: &PoolContext, a: usize, b: usize) -> f64 {
        model.hyper().kernel(&ctx.points[a], &ctx.points[b]) - self.v.column(a).dot(&self.v.column(b))
    }
}

/// Per-candidate acquisition averages over the bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct PoolScores {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl PoolScores {
    /// Coupled (or constrained) value: the sum of both levels.
    pub fn total(&self, i: usize) -> f64 {
        self.f[i] + self.g[i]
    }
}

pub struct PoolScorer<'a> {
    pub ctx: &'a PoolContext,
    pub models: &'a Models,
    post_f: PoolPosterior,
    post_g: PoolPosterior,
    post_cu: Vec<PoolPosterior>,
    post_cl: Vec<PoolPosterior>,
    constrained: bool,
}

impl<'a> PoolScorer<'a> {
    /// With `constrained` unset, constraint models are ignored.
    pub fn new(ctx: &'a PoolContext, models: &'a Models, constrained: bool) -> Result<Self> {
        let post = |m: &GpModel| PoolPosterior::new(m, ctx);
        Ok(PoolScorer {
            ctx,
            models,
            post_f: post(&models.f)?,
            post_g: post(&models.g)?,
            post_cu: if constrained { models.cu.iter().map(post).collect::<Result<_>>()? } else { Vec::new() },
            post_cl: if constrained { models.cl.iter().map(post).collect::<Result<_>>()? } else { Vec::new() },
            constrained,
        })
    }

    /// Log-ratio summands of one sample for every candidate, `(f, g)`.
    pub fn sample_terms(&self, bundle: &McBundle, sample: &McSample) -> Result<(Vec<f64>, Vec<f64>)> {
        let ctx = self.ctx;
        let grid = &ctx.grid;
        let tab = sample
            .tables
            .as_ref()
            .ok_or_else(|| Error::Usage("pool scoring needs a pool bundle".into()))?;
        let opt = &sample.optimum;
        let (ixs, its) = match (opt.x_index, opt.theta_index) {
            (Some(i), Some(j)) => (i, j),
            _ => return Err(Error::Usage("pool scoring needs grid optima".into())),
        };
        let (nx, nt) = (grid.x_grid.len(), grid.theta_grid.len());
        let s = grid.index(ixs, its);
        let (mf, mg) = (&self.models.f, &self.models.g);
        let (pf, pg) = (&self.post_f, &self.post_g);
        let sig_f = sd_noise(bundle.noise_f);
        let sig_g = sd_noise(bundle.noise_g);
        let (aug_f, aug_g) = (aug_noise(mf), aug_noise(mg));
        let use_c = self.constrained;
        let ncu = if use_c { self.post_cu.len() } else { 0 };
        let ncl = if use_c { self.post_cl.len() } else { 0 };

        // Covariances with the optimum that depend on one grid axis only.
        let cov_as_f: Vec<f64> = (0..nx).map(|i| pf.cov(mf, ctx, grid.index(i, tab.inner[i]), s)).collect();
        let cov_as_g: Vec<f64> = (0..nt).map(|j| pg.cov(mg, ctx, grid.index(ixs, j), s)).collect();

        let mut out_f = vec![0.0; ctx.len()];
        let mut out_g = vec![0.0; ctx.len()];
        let mut cs_u = Vec::with_capacity(ncu);
        let mut ys_u = Vec::with_capacity(ncu);
        let mut cs_l = Vec::with_capacity(ncl);
        let mut ys_l = Vec::with_capacity(ncl);
        for i in 0..nx {
            let a_f = grid.index(i, tab.inner[i]);
            for j in 0..nt {
                let b = grid.index(i, j);
                let st = TriadStats {
                    mu_a: pf.mean[a_f],
                    var_a: pf.var[a_f],
                    mu_b: pf.mean[b],
                    var_b: pf.var[b],
                    mu_s: pf.mean[s],
                    var_s: pf.var[s],
                    cov_ab: pf.cov(mf, ctx, a_f, b),
                    cov_as: cov_as_f[i],
                    cov_bs: pf.cov(mf, ctx, b, s),
                    noise: bundle.noise_f,
                    aug: aug_f,
                    v_star: opt.f_star,
                };
                let y = tab.f[(i, j)] + sig_f * sample.eps_f;
                cs_u.clear();
                ys_u.clear();
                for n in 0..ncu {
                    let (m, p) = (&self.models.cu[n], &self.post_cu[n]);
                    cs_u.push(ConstraintStats {
                        mu_a: p.mean[a_f],
                        var_a: p.var[a_f],
                        mu_b: p.mean[b],
                        var_b: p.var[b],
                        cov_ab: p.cov(m, ctx, a_f, b),
                        noise: bundle.noise_cu[n],
                    });
                    ys_u.push(tab.cu[n][(i, j)] + sd_noise(bundle.noise_cu[n]) * sample.eps_cu[n]);
                }
                out_f[b] = constrained_level_log_ratio(&st, y, i == ixs, &cs_u, &ys_u);

                let a_g = grid.index(ixs, j);
                let st = TriadStats {
                    mu_a: pg.mean[a_g],
                    var_a: pg.var[a_g],
                    mu_b: pg.mean[b],
                    var_b: pg.var[b],
                    mu_s: pg.mean[s],
                    var_s: pg.var[s],
                    cov_ab: pg.cov(mg, ctx, a_g, b),
                    cov_as: cov_as_g[j],
                    cov_bs: pg.cov(mg, ctx, b, s),
                    noise: bundle.noise_g,
                    aug: aug_g,
                    v_star: opt.g_star,
                };
                let y = tab.g[(i, j)] + sig_g * sample.eps_g;
                cs_l.clear();
                ys_l.clear();
                for m in 0..ncl {
                    let (model, p) = (&self.models.cl[m], &self.post_cl[m]);
                    cs_l.push(ConstraintStats {
                        mu_a: p.mean[a_g],
                        var_a: p.var[a_g],
                        mu_b: p.mean[b],
                        var_b: p.var[b],
                        cov_ab: p.cov(model, ctx, a_g, b),
                        noise: bundle.noise_cl[m],
                    });
                    ys_l.push(tab.cl[m][(i, j)] + sd_noise(bundle.noise_cl[m]) * sample.eps_cl[m]);
                }
                out_g[b] = constrained_level_log_ratio(&st, y, j == its, &cs_l, &ys_l);
            }
        }
        Ok((out_f, out_g))
    }

    /// Monte-Carlo averages for every candidate. Samples are scored in
    /// parallel and summed in sample order.
    pub fn scores(&self, bundle: &McBundle) -> Result<PoolScores> {
        if bundle.is_empty() {
            return Err(Error::Usage("empty bundle".into()));
        }
        let terms = bundle
            .samples
            .par_iter()
            .map(|s| self.sample_terms(bundle, s))
            .collect::<Result<Vec<_>>>()?;
        let p = self.ctx.len();
        let mut f = vec![0.0; p];
        let mut g = vec![0.0; p];
        for (tf, tg) in &terms {
            for i in 0..p {
                f[i] += tf[i];
                g[i] += tg[i];
            }
        }
        let k = bundle.len() as f64;
        f.iter_mut().chain(g.iter_mut()).for_each(|v| *v /= k);
        Ok(PoolScores { f, g })
    }
}

/// Argmax over the pool. Coupled and constrained modes rank by the sum of
/// both levels; decoupled mode ranks `pool × {f, g}`. Ties go to the lowest
/// pool index, then to `f`.
pub fn select_pool(scores: &PoolScores, ctx: &PoolContext, mode: AcqMode) -> Result<Choice> {
    let mut best: Option<(usize, Level, f64)> = None;
    let mut offer = |i: usize, level: Level, v: f64| {
        if !v.is_nan() && best.is_none_or(|(_, _, b)| v > b) {
            best = Some((i, level, v));
        }
    };
    for i in 0..ctx.len() {
        match mode {
            AcqMode::Coupled | AcqMode::Constrained => offer(i, Level::Both, scores.total(i)),
            AcqMode::Decoupled => {
                offer(i, Level::Upper, scores.f[i]);
                offer(i, Level::Lower, scores.g[i]);
            }
        }
    }
    let (i, level, value) = best.ok_or_else(|| Error::Numeric("acquisition is NaN on the whole pool".into()))?;
    Ok(Choice {
        pool_index: Some(i),
        point: ctx.query_point(i),
        level,
        value,
    })
}

// --------------------------------------------------------------- point --

/// A whitened input together with derivatives of every quantity with
/// respect to the candidate coordinates.
struct DualWhite {
    z: Vec<f64>,
    /// `∂z/∂(candidate)`, `dim × nc`.
    dz: DMatrix<f64>,
    mean: Dual,
    var: Dual,
    v: DVector<f64>,
    /// `∂v/∂(candidate)`, `n × nc`.
    dv: DMatrix<f64>,
}

fn dual_white(model: &GpModel, z: &[f64], dz: &DMatrix<f64>) -> Result<DualWhite> {
    let wg = model.whiten_with_grad(z)?;
    let dmean = dz.tr_mul(&wg.dmean);
    let dvar = dz.tr_mul(&wg.dvar);
    Ok(DualWhite {
        z: z.to_vec(),
        dz: dz.clone(),
        mean: Dual::with_grad(wg.w.mean, dmean.as_slice()),
        var: Dual::with_grad(wg.w.var, dvar.as_slice()),
        dv: &wg.dv * dz,
        v: wg.w.v,
    })
}

fn dual_cov(model: &GpModel, a: &DualWhite, b: &DualWhite) -> Dual {
    let h = model.hyper();
    let k = h.kernel(&a.z, &b.z);
    let scale = -k / (h.lengthscale * h.lengthscale);
    let dka = DVector::from_iterator(a.z.len(), a.z.iter().zip(&b.z).map(|(p, q)| scale * (p - q)));
    let gk = a.dz.tr_mul(&dka) - b.dz.tr_mul(&dka);
    let gdot = a.dv.tr_mul(&b.v) + b.dv.tr_mul(&a.v);
    Dual::with_grad(k - a.v.dot(&b.v), (gk - gdot).as_slice())
}

fn path_dual(p: &PathSample, z: &[f64]) -> Dual {
    Dual::with_grad(p.eval(z), p.grad(z).as_slice())
}

fn concat(x: &[f64], t: &[f64]) -> Vec<f64> {
    let mut z = x.to_vec();
    z.extend_from_slice(t);
    z
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt() < tol
}

/// The candidate whitened under each model.
struct Candidate {
    x: Vec<f64>,
    theta: Vec<f64>,
    z: Vec<f64>,
    f: DualWhite,
    g: DualWhite,
    cu: Vec<DualWhite>,
    cl: Vec<DualWhite>,
}

/// Acquisition at arbitrary points, with gradients in `(x, θ)`.
pub struct PointScorer<'a> {
    pub models: &'a Models,
    pub bundle: &'a McBundle,
    constrained: bool,
}

impl<'a> PointScorer<'a> {
    pub fn new(models: &'a Models, bundle: &'a McBundle, constrained: bool) -> Result<Self> {
        let d = bundle.dim_x + bundle.dim_theta;
        if d > DUAL_DIM {
            return Err(Error::Usage(format!("point scoring supports at most {DUAL_DIM} input dimensions")));
        }
        if bundle.is_empty() {
            return Err(Error::Usage("empty bundle".into()));
        }
        Ok(PointScorer {
            models,
            bundle,
            constrained,
        })
    }

    fn dim(&self) -> usize {
        self.bundle.dim_x + self.bundle.dim_theta
    }

    fn candidate(&self, point: &QueryPoint) -> Result<Candidate> {
        let d = self.dim();
        if point.x.len() != self.bundle.dim_x || point.theta.len() != self.bundle.dim_theta {
            return Err(Error::Usage("candidate dimensions do not match the bundle".into()));
        }
        let z = point.concat();
        let eye = DMatrix::identity(d, d);
        let w = |m: &GpModel| dual_white(m, &z, &eye);
        let (cu, cl) = if self.constrained {
            (
                self.models.cu.iter().map(w).collect::<Result<_>>()?,
                self.models.cl.iter().map(w).collect::<Result<_>>()?,
            )
        } else {
            (Vec::new(), Vec::new())
        };
        Ok(Candidate {
            x: point.x.clone(),
            theta: point.theta.clone(),
            f: w(&self.models.f)?,
            g: w(&self.models.g)?,
            cu,
            cl,
            z,
        })
    }

    /// `θ̃*_k(x)` and its Jacobian in `x` (zero on a grid).
    fn inner(&self, sample: &McSample, x: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
        let (dx, dt) = (self.bundle.dim_x, self.bundle.dim_theta);
        match &self.bundle.domain {
            Domain::Pool(grid) => {
                let tab = sample.tables.as_ref().expect("pool bundles carry tables");
                let j = match grid.x_grid.iter().position(|gx| gx.as_slice() == x) {
                    Some(i) => tab.inner[i],
                    None => inner_argmax_grid(&sample.g, x, &grid.theta_grid).0,
                };
                (grid.theta_grid[j].clone(), DMatrix::zeros(dt, dx))
            }
            Domain::Continuous(opts) => {
                let (theta, _) = inner_solve(&sample.g, x, &self.bundle.theta_seeds, opts.inner);
                let jac = theta_star_jacobian(&sample.g, x, &theta).unwrap_or_else(|e| {
                    log::debug!("acquisition uses a zero θ* Jacobian: {e}");
                    DMatrix::zeros(dt, dx)
                });
                (theta, jac)
            }
        }
    }

    fn at_optimum(&self, a: &[f64], b: &[f64]) -> bool {
        match self.bundle.domain {
            Domain::Pool(_) => a == b,
            Domain::Continuous(_) => close(a, b, 1e-9),
        }
    }

    fn sample_terms(&self, c: &Candidate, sample: &McSample) -> Result<(Dual, Dual)> {
        let (dx, dt) = (self.bundle.dim_x, self.bundle.dim_theta);
        let d = dx + dt;
        let opt: &OptimumSample = &sample.optimum;
        let zero = DMatrix::zeros(d, d);
        let zs = concat(&opt.x_star, &opt.theta_star);
        let m = self.models;

        // Upper level: truncation at (x, θ̃*(x)).
        let (theta_k, jac) = self.inner(sample, &c.x);
        let mut da_f = DMatrix::zeros(d, d);
        for i in 0..dx {
            da_f[(i, i)] = 1.0;
        }
        da_f.view_mut((dx, 0), (dt, dx)).copy_from(&jac);
        let za_f = concat(&c.x, &theta_k);
        let a = dual_white(&m.f, &za_f, &da_f)?;
        let s = dual_white(&m.f, &zs, &zero)?;
        let st = TriadStats {
            mu_a: a.mean,
            var_a: a.var,
            mu_b: c.f.mean,
            var_b: c.f.var,
            mu_s: s.mean,
            var_s: s.var,
            cov_ab: dual_cov(&m.f, &a, &c.f),
            cov_as: dual_cov(&m.f, &a, &s),
            cov_bs: dual_cov(&m.f, &c.f, &s),
            noise: self.bundle.noise_f,
            aug: aug_noise(&m.f),
            v_star: opt.f_star,
        };
        let y = path_dual(&sample.f, &c.z) + Dual::constant(sd_noise(self.bundle.noise_f) * sample.eps_f);
        let mut cs = Vec::new();
        let mut ys = Vec::new();
        for (n, cw) in c.cu.iter().enumerate() {
            let model = &m.cu[n];
            let an = dual_white(model, &za_f, &da_f)?;
            cs.push(ConstraintStats {
                mu_a: an.mean,
                var_a: an.var,
                mu_b: cw.mean,
                var_b: cw.var,
                cov_ab: dual_cov(model, &an, cw),
                noise: self.bundle.noise_cu[n],
            });
            ys.push(
                path_dual(&sample.cu[n], &c.z)
                    + Dual::constant(sd_noise(self.bundle.noise_cu[n]) * sample.eps_cu[n]),
            );
        }
        let tf = constrained_level_log_ratio(&st, y, self.at_optimum(&c.x, &opt.x_star), &cs, &ys);

        // Lower level: truncation at (x*, θ).
        let mut da_g = DMatrix::zeros(d, d);
        for i in dx..d {
            da_g[(i, i)] = 1.0;
        }
        let za_g = concat(&opt.x_star, &c.theta);
        let a = dual_white(&m.g, &za_g, &da_g)?;
        let s = dual_white(&m.g, &zs, &zero)?;
        let st = TriadStats {
            mu_a: a.mean,
            var_a: a.var,
            mu_b: c.g.mean,
            var_b: c.g.var,
            mu_s: s.mean,
            var_s: s.var,
            cov_ab: dual_cov(&m.g, &a, &c.g),
            cov_as: dual_cov(&m.g, &a, &s),
            cov_bs: dual_cov(&m.g, &c.g, &s),
            noise: self.bundle.noise_g,
            aug: aug_noise(&m.g),
            v_star: opt.g_star,
        };
        let y = path_dual(&sample.g, &c.z) + Dual::constant(sd_noise(self.bundle.noise_g) * sample.eps_g);
        let mut cs = Vec::new();
        let mut ys = Vec::new();
        for (n, cw) in c.cl.iter().enumerate() {
            let model = &m.cl[n];
            let an = dual_white(model, &za_g, &da_g)?;
            cs.push(ConstraintStats {
                mu_a: an.mean,
                var_a: an.var,
                mu_b: cw.mean,
                var_b: cw.var,
                cov_ab: dual_cov(model, &an, cw),
                noise: self.bundle.noise_cl[n],
            });
            ys.push(
                path_dual(&sample.cl[n], &c.z)
                    + Dual::constant(sd_noise(self.bundle.noise_cl[n]) * sample.eps_cl[n]),
            );
        }
        let tg = constrained_level_log_ratio(&st, y, self.at_optimum(&c.theta, &opt.theta_star), &cs, &ys);
        Ok((tf, tg))
    }

    /// Per-sample `(f, g)` summands at `point`.
    pub fn terms(&self, point: &QueryPoint) -> Result<Vec<(Dual, Dual)>> {
        let c = self.candidate(point)?;
        self.bundle.samples.iter().map(|s| self.sample_terms(&c, s)).collect()
    }

    /// Monte-Carlo averages `(f, g)` with gradients in `(x, θ)`.
    pub fn evaluate(&self, point: &QueryPoint) -> Result<(Dual, Dual)> {
        let terms = self.terms(point)?;
        let k = Dual::constant(terms.len() as f64);
        let (mut f, mut g) = (Dual::constant(0.0), Dual::constant(0.0));
        for (tf, tg) in terms {
            f = f + tf;
            g = g + tg;
        }
        Ok((f / k, g / k))
    }

    /// Value and gradient of the chosen level (or their sum).
    pub fn level_value(&self, point: &QueryPoint, level: Level) -> Result<(f64, Vec<f64>)> {
        let (f, g) = self.evaluate(point)?;
        let v = match level {
            Level::Upper => f,
            Level::Lower => g,
            Level::Both => f + g,
        };
        if !v.v.is_finite() {
            return Err(Error::Numeric("non-finite acquisition value".into()));
        }
        Ok((v.v, v.d[..self.dim()].to_vec()))
    }
}

/// Eq.-4 style coupled estimate at one candidate.
pub fn bljes_coupled(models: &Models, bundle: &McBundle, candidate: &QueryPoint) -> Result<f64> {
    let (f, g) = PointScorer::new(models, bundle, false)?.evaluate(candidate)?;
    Ok(f.v + g.v)
}

pub fn bljes_decoupled_f(models: &Models, bundle: &McBundle, candidate: &QueryPoint) -> Result<f64> {
    Ok(PointScorer::new(models, bundle, false)?.evaluate(candidate)?.0.v)
}

pub fn bljes_decoupled_g(models: &Models, bundle: &McBundle, candidate: &QueryPoint) -> Result<f64> {
    Ok(PointScorer::new(models, bundle, false)?.evaluate(candidate)?.1.v)
}

pub fn bljes_constrained(models: &Models, bundle: &McBundle, candidate: &QueryPoint) -> Result<f64> {
    let (f, g) = PointScorer::new(models, bundle, true)?.evaluate(candidate)?;
    Ok(f.v + g.v)
}

fn triad_f64(
    model: &GpModel,
    a: &Whitened,
    b: &Whitened,
    s: &Whitened,
    noise: f64,
    v_star: f64,
) -> TriadStats {
    TriadStats {
        mu_a: a.mean,
        var_a: a.var,
        mu_b: b.mean,
        var_b: b.var,
        mu_s: s.mean,
        var_s: s.var,
        cov_ab: model.covariance(a, b),
        cov_as: model.covariance(a, s),
        cov_bs: model.covariance(b, s),
        noise,
        aug: aug_noise(model),
        v_star,
    }
}

/// Upper-level moments for one sample and candidate, from the `D_t` model.
/// `None` when the conditioning system is degenerate.
pub fn truncated_moments_f(
    model_f: &GpModel,
    sample: &OptimumSample,
    candidate: &QueryPoint,
    theta_star_of_x: &[f64],
    y_f: f64,
) -> Result<Option<TruncatedMoments>> {
    let a = model_f.whiten(&concat(&candidate.x, theta_star_of_x))?;
    let b = model_f.whiten(&candidate.concat())?;
    let s = model_f.whiten(&concat(&sample.x_star, &sample.theta_star))?;
    let st = triad_f64(model_f, &a, &b, &s, model_f.hyper().noise_variance, sample.f_star);
    Ok(triad_moments(&st, y_f))
}

/// Lower-level moments, truncating at `(x*, θ)`.
pub fn truncated_moments_g(
    model_g: &GpModel,
    sample: &OptimumSample,
    candidate: &QueryPoint,
    y_g: f64,
) -> Result<Option<TruncatedMoments>> {
    let a = model_g.whiten(&concat(&sample.x_star, &candidate.theta))?;
    let b = model_g.whiten(&candidate.concat())?;
    let s = model_g.whiten(&concat(&sample.x_star, &sample.theta_star))?;
    let st = triad_f64(model_g, &a, &b, &s, model_g.hyper().noise_variance, sample.g_star);
    Ok(triad_moments(&st, y_g))
}

/// Number of quasi-random points scored before local ascent.
const CONTINUOUS_SCAN: usize = 64;
/// Best scan points refined by ascent.
const CONTINUOUS_REFINE: usize = 5;

/// Multi-start maximization of one level (or the sum) over the unit box.
pub fn maximize_continuous<R: Rng + ?Sized>(
    scorer: &PointScorer,
    level: Level,
    rng: &mut R,
) -> Result<(QueryPoint, f64)> {
    let (dx, d) = (scorer.bundle.dim_x, scorer.dim());
    let shift: Vec<f64> = (0..d).map(|_| rng.random()).collect();
    let scan = shifted_halton(CONTINUOUS_SCAN, d, &shift);
    let values: Vec<Option<f64>> = scan
        .par_iter()
        .map(|z| scorer.level_value(&QueryPoint::from_concat(z, dx), level).ok().map(|v| v.0))
        .collect();
    let mut order: Vec<usize> = (0..scan.len()).filter(|&i| values[i].is_some()).collect();
    if order.is_empty() {
        return Err(Error::Numeric("acquisition failed at every scan point".into()));
    }
    order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).expect("finite").then(a.cmp(&b)));
    let lo = vec![0.0; d];
    let hi = vec![1.0; d];
    let runs: Vec<Option<(Vec<f64>, f64)>> = order
        .iter()
        .take(CONTINUOUS_REFINE)
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&&i| {
            maximize_in_box(
                |z| scorer.level_value(&QueryPoint::from_concat(z, dx), level).ok(),
                &scan[i],
                &lo,
                &hi,
                AscentOptions {
                    max_iter: 50,
                    grad_tol: 1e-6,
                    step_tol: 1e-10,
                },
            )
            .map(|r| (r.x, r.value))
        })
        .collect();
    let mut best = (scan[order[0]].clone(), values[order[0]].expect("filtered"));
    for (z, v) in runs.into_iter().flatten() {
        if v > best.1 {
            best = (z, v);
        }
    }
    Ok((QueryPoint::from_concat(&best.0, dx), best.1))
}

/// Continuous-domain query selection. Decoupled mode maximizes each level
/// separately and keeps the larger (upper level on ties).
pub fn select_continuous<R: Rng + ?Sized>(
    models: &Models,
    bundle: &McBundle,
    mode: AcqMode,
    rng: &mut R,
) -> Result<Choice> {
    if mode == AcqMode::Constrained {
        return Err(Error::Usage("constrained acquisition is pool-only".into()));
    }
    let scorer = PointScorer::new(models, bundle, false)?;
    let choose = |level, rng: &mut R| -> Result<Choice> {
        let (point, value) = maximize_continuous(&scorer, level, rng)?;
        Ok(Choice {
            pool_index: None,
            point,
            level,
            value,
        })
    };
    match mode {
        AcqMode::Decoupled => {
            let f = choose(Level::Upper, rng)?;
            let g = choose(Level::Lower, rng)?;
            Ok(if g.value > f.value { g } else { f })
        }
        _ => choose(Level::Both, rng),
    }
}
