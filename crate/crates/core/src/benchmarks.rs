//! Benchmark problems on the unit cube, in maximization form.
//!
//! Catalog (all inputs rescaled from the native box to `[0,1]`):
//!
//! | name | `d_X` | `d_Θ` | N | M | grid/dim | upper `f` | lower `g` |
//! |---|---|---|---|---|---|---|---|
//! | `gp-prior` | 1 | 1 | 0 | 0 | 100 | RFF prior draw, `ℓ_U` | RFF prior draw, `ℓ_L` |
//! | `bg` | 1 | 1 | 0 | 0 | 100 | −Branin-Hoo | −Goldstein-Price |
//! | `sb` | 1 | 1 | 0 | 0 | 100 | −six-hump camel | −Branin-Hoo |
//! | `smd01`–`smd03` | 2 | 2 | 0 | 0 | 10 | −F | −f |
//! | `smd09`, `smd11` | 2 | 2 | 1 | 1 | 10 | −F | −f |
//! | `smd10` | 2 | 2 | 2 | 1 | 10 | −F | −f |
//! | `smd12` | 2 | 2 | 3 | 2 | 10 | −F | −f |
//!
//! For the composed problems the two-argument test function reads
//! `(x, θ)` as its `(x1, x2)`. For the SMD problems (with `p = q = r = 1`)
//! `x = (x_u1, x_u2)` and `θ = (x_l1, x_l2)`. Constraints keep the SMD
//! `G(·) ≥ 0` convention. Open ends of a native box are pulled in by 1% of
//! its width so `tan` and `log` stay finite on the grid.

use std::collections::BTreeMap;
use std::f64::consts::{E, FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bilevel::GridSpec;
use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, QueryPoint};
use crate::path::{draw_feature_map, PathSample};
use crate::rng::{stream, tag};

/// Output transform applied to every raw function value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transform {
    Identity,
    SignedLog1p,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Identity => "identity",
            Transform::SignedLog1p => "signed-log1p",
        }
    }
}

pub fn apply_transform(raw: f64, transform: Transform) -> f64 {
    match transform {
        Transform::Identity => raw,
        Transform::SignedLog1p => raw.signum() * raw.abs().ln_1p(),
    }
}

/// Noiseless function values at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub f: f64,
    pub g: f64,
    pub cu: Vec<f64>,
    pub cl: Vec<f64>,
}

/// Raw (untransformed, maximization-form) evaluator on the unit cube.
pub trait Evaluator: Send + Sync {
    fn eval(&self, x: &[f64], theta: &[f64]) -> Values;
}

#[derive(Clone)]
pub struct BenchmarkSpec {
    pub name: String,
    /// Parameters as resolved, for the manifest.
    pub params: BTreeMap<String, String>,
    pub dim_x: usize,
    pub dim_theta: usize,
    pub n_upper: usize,
    pub n_lower: usize,
    pub grid: GridSpec,
    pub transform: Transform,
    evaluator: Arc<dyn Evaluator>,
}

impl fmt::Debug for BenchmarkSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BenchmarkSpec")
            .field("name", &self.name)
            .field("params", &self.params)
            .field("dim_x", &self.dim_x)
            .field("dim_theta", &self.dim_theta)
            .field("n_upper", &self.n_upper)
            .field("n_lower", &self.n_lower)
            .field("points_per_dim", &self.grid.points_per_dim)
            .field("transform", &self.transform)
            .finish()
    }
}

impl BenchmarkSpec {
    pub fn new(
        name: &str,
        dims: (usize, usize),
        constraints: (usize, usize),
        points_per_dim: usize,
        transform: Transform,
        evaluator: Arc<dyn Evaluator>,
    ) -> Self {
        BenchmarkSpec {
            name: name.to_string(),
            params: BTreeMap::new(),
            dim_x: dims.0,
            dim_theta: dims.1,
            n_upper: constraints.0,
            n_lower: constraints.1,
            grid: GridSpec::uniform(points_per_dim, dims.0, dims.1),
            transform,
            evaluator,
        }
    }

    pub fn is_constrained(&self) -> bool {
        self.n_upper + self.n_lower > 0
    }

    /// Replaces the pool with a uniform grid of `points_per_dim` per axis.
    pub fn with_grid(mut self, points_per_dim: usize) -> Self {
        self.grid = GridSpec::uniform(points_per_dim, self.dim_x, self.dim_theta);
        self
    }

    /// Transformed noiseless values.
    pub fn evaluate(&self, point: &QueryPoint) -> Values {
        let v = self.evaluator.eval(&point.x, &point.theta);
        let t = |y: f64| apply_transform(y, self.transform);
        Values {
            f: t(v.f),
            g: t(v.g),
            cu: v.cu.into_iter().map(t).collect(),
            cl: v.cl.into_iter().map(t).collect(),
        }
    }
}

// ---------------------------------------------------------- functions --

fn scale(u: f64, lo: f64, hi: f64) -> f64 {
    lo + u * (hi - lo)
}

/// Like [`scale`] but with both ends pulled in by 1% of the width.
fn scale_open(u: f64, lo: f64, hi: f64) -> f64 {
    let m = 0.01 * (hi - lo);
    scale(u, lo + m, hi - m)
}

fn scale_open_lo(u: f64, lo: f64, hi: f64) -> f64 {
    scale(u, lo + 0.01 * (hi - lo), hi)
}

pub fn branin(x1: f64, x2: f64) -> f64 {
    let b = 5.1 / (4.0 * PI * PI);
    let c = 5.0 / PI;
    let t = 1.0 / (8.0 * PI);
    (x2 - b * x1 * x1 + c * x1 - 6.0).powi(2) + 10.0 * (1.0 - t) * x1.cos() + 10.0
}

pub fn goldstein_price(x1: f64, x2: f64) -> f64 {
    let a = 1.0
        + (x1 + x2 + 1.0).powi(2)
            * (19.0 - 14.0 * x1 + 3.0 * x1 * x1 - 14.0 * x2 + 6.0 * x1 * x2 + 3.0 * x2 * x2);
    let b = 30.0
        + (2.0 * x1 - 3.0 * x2).powi(2)
            * (18.0 - 32.0 * x1 + 12.0 * x1 * x1 + 48.0 * x2 - 36.0 * x1 * x2 + 27.0 * x2 * x2);
    a * b
}

pub fn six_hump_camel(x1: f64, x2: f64) -> f64 {
    (4.0 - 2.1 * x1 * x1 + x1.powi(4) / 3.0) * x1 * x1 + x1 * x2 + (-4.0 + 4.0 * x2 * x2) * x2 * x2
}

fn branin_unit(u: f64, v: f64) -> f64 {
    branin(scale(u, -5.0, 10.0), scale(v, 0.0, 15.0))
}

struct Bg;

impl Evaluator for Bg {
    fn eval(&self, x: &[f64], t: &[f64]) -> Values {
        Values {
            f: -branin_unit(x[0], t[0]),
            g: -goldstein_price(scale(x[0], -2.0, 2.0), scale(t[0], -2.0, 2.0)),
            cu: Vec::new(),
            cl: Vec::new(),
        }
    }
}

struct Sb;

impl Evaluator for Sb {
    fn eval(&self, x: &[f64], t: &[f64]) -> Values {
        Values {
            f: -six_hump_camel(scale(x[0], -3.0, 3.0), scale(t[0], -2.0, 2.0)),
            g: -branin_unit(x[0], t[0]),
            cu: Vec::new(),
            cl: Vec::new(),
        }
    }
}

/// SMD problem with native variables `(x_u1, x_u2, x_l1, x_l2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Smd {
    S01,
    S02,
    S03,
    S09,
    S10,
    S11,
    S12,
}

impl Smd {
    fn constraints(self) -> (usize, usize) {
        match self {
            Smd::S09 | Smd::S11 => (1, 1),
            Smd::S10 => (2, 1),
            Smd::S12 => (3, 2),
            _ => (0, 0),
        }
    }

    /// Native values `(u1, u2, l1, l2)` of a unit-cube point.
    pub fn native(self, x: &[f64], t: &[f64]) -> [f64; 4] {
        let u1 = scale(x[0], -5.0, 10.0);
        let l1 = scale(t[0], -5.0, 10.0);
        let (u2, l2) = match self {
            Smd::S01 | Smd::S03 | Smd::S10 => (scale(x[1], -5.0, 10.0), scale_open(t[1], -FRAC_PI_2, FRAC_PI_2)),
            Smd::S02 => (scale(x[1], -5.0, 1.0), scale_open_lo(t[1], 0.0, E)),
            Smd::S09 => (scale(x[1], -5.0, 1.0), scale_open_lo(t[1], -1.0, -1.0 + E)),
            Smd::S11 => (scale(x[1], -1.0, 1.0), scale_open(t[1], 1.0 / E, E)),
            Smd::S12 => (scale(x[1], -14.1, 14.1), scale_open(t[1], -1.5, 1.5)),
        };
        [u1, u2, l1, l2]
    }

    /// `(F, f, G, g)` in the SMD minimization form.
    pub fn native_eval(self, v: [f64; 4]) -> (f64, f64, Vec<f64>, Vec<f64>) {
        let [u1, u2, l1, l2] = v;
        let ring = |s: f64| s - (s + 0.5).floor();
        match self {
            Smd::S01 => {
                let d = (u2 - l2.tan()).powi(2);
                (u1 * u1 + l1 * l1 + u2 * u2 + d, u1 * u1 + l1 * l1 + d, vec![], vec![])
            }
            Smd::S02 => {
                let d = (u2 - l2.ln()).powi(2);
                (u1 * u1 - l1 * l1 + u2 * u2 - d, u1 * u1 + l1 * l1 + d, vec![], vec![])
            }
            Smd::S03 => {
                let d = (u2 * u2 - l2.tan()).powi(2);
                let f2 = 1.0 + l1 * l1 - (2.0 * PI * l1).cos();
                (u1 * u1 + l1 * l1 + u2 * u2 + d, u1 * u1 + f2 + d, vec![], vec![])
            }
            Smd::S09 => {
                let d = (u2 - (1.0 + l2).ln()).powi(2);
                (
                    u1 * u1 - l1 * l1 + u2 * u2 - d,
                    u1 * u1 + l1 * l1 + d,
                    vec![ring(u1 * u1 + u2 * u2)],
                    vec![ring(l1 * l1 + l2 * l2)],
                )
            }
            Smd::S10 => {
                let d = (u2 - l2.tan()).powi(2);
                (
                    (u1 - 2.0).powi(2) + l1 * l1 + (u2 - 2.0).powi(2) - d,
                    u1 * u1 + (l1 - 2.0).powi(2) + d,
                    vec![u1 - u2.powi(3), u2 - u1.powi(3)],
                    vec![l1],
                )
            }
            Smd::S11 => {
                let d = (u2 - l2.ln()).powi(2);
                (
                    u1 * u1 - l1 * l1 + u2 * u2 - d,
                    u1 * u1 + l1 * l1 + d,
                    vec![u2 - 1.0 - l2.ln()],
                    vec![d - 1.0],
                )
            }
            Smd::S12 => {
                let d = (u2 - l2.tan()).powi(2);
                (
                    (u1 - 1.0).powi(2) + l1 * l1 + (u2 - 1.0).powi(2) + d,
                    u1 * u1 + (l1 - 1.0).powi(2) + d,
                    vec![u2 - l2.tan(), u1 - u2.powi(3), u2 - u1.powi(3)],
                    vec![l1, d - 1.0],
                )
            }
        }
    }
}

impl Evaluator for Smd {
    fn eval(&self, x: &[f64], t: &[f64]) -> Values {
        let (fu, fl, cu, cl) = self.native_eval(self.native(x, t));
        Values {
            f: -fu,
            g: -fl,
            cu,
            cl,
        }
    }
}

/// Two frozen zero-mean RFF prior draws with unit output scale.
struct GpPrior {
    f: PathSample,
    g: PathSample,
}

impl Evaluator for GpPrior {
    fn eval(&self, x: &[f64], t: &[f64]) -> Values {
        let mut z = x.to_vec();
        z.extend_from_slice(t);
        Values {
            f: self.f.eval(&z),
            g: self.g.eval(&z),
            cu: Vec::new(),
            cl: Vec::new(),
        }
    }
}

/// Features per frozen prior draw.
pub const GP_PRIOR_FEATURES: usize = 4096;

pub fn gp_prior_problem(lengthscale_u: f64, lengthscale_l: f64, seed: u64) -> Result<BenchmarkSpec> {
    if !(lengthscale_u > 0.0 && lengthscale_l > 0.0) {
        return Err(Error::Usage("gp-prior lengthscales must be positive".into()));
    }
    let mut rng = stream(seed, &[tag::PROBLEM]);
    let mut draw = |ell: f64| {
        let map = Arc::new(draw_feature_map(
            &GpHyperparams::new(0.0, ell, 1.0, 0.0),
            GP_PRIOR_FEATURES,
            2,
            &mut rng,
        ));
        let w = DVector::from_iterator(GP_PRIOR_FEATURES, (0..GP_PRIOR_FEATURES).map(|_| rng.sample(StandardNormal)));
        PathSample::new(map, w, 0.0, 1)
    };
    let f = draw(lengthscale_u);
    let g = draw(lengthscale_l);
    let mut spec = BenchmarkSpec::new(
        "gp-prior",
        (1, 1),
        (0, 0),
        100,
        Transform::Identity,
        Arc::new(GpPrior { f, g }),
    );
    spec.params.insert("lU".into(), lengthscale_u.to_string());
    spec.params.insert("lL".into(), lengthscale_l.to_string());
    spec.params.insert("seed".into(), seed.to_string());
    Ok(spec)
}

/// Splits `name:k=v,k=v` into the name and its parameters.
pub fn parse_problem(s: &str) -> Result<(String, BTreeMap<String, String>)> {
    let (name, rest) = match s.split_once(':') {
        Some((n, r)) => (n, r),
        None => (s, ""),
    };
    let mut params = BTreeMap::new();
    for kv in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("problem parameter `{kv}` is not key=value")))?;
        params.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok((name.trim().to_ascii_lowercase(), params))
}

fn param<T: std::str::FromStr>(params: &BTreeMap<String, String>, key: &str, default: T) -> Result<T> {
    match params.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| Error::Usage(format!("cannot parse problem parameter {key}={v}"))),
    }
}

/// Builds a problem by name. `gp-prior` takes `lU`, `lL` and `seed`
/// (default `default_seed`); every problem accepts `grid` to override the
/// points per dimension.
pub fn make_problem(name: &str, params: &BTreeMap<String, String>, default_seed: u64) -> Result<BenchmarkSpec> {
    let known: &[&str] = match name {
        "gp-prior" => &["lU", "lL", "seed", "grid"],
        _ => &["grid"],
    };
    if let Some(k) = params.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::Usage(format!("unknown parameter `{k}` for problem {name}")));
    }
    let smd = |s: Smd, label: &str| {
        BenchmarkSpec::new(label, (2, 2), s.constraints(), 10, Transform::SignedLog1p, Arc::new(s))
    };
    let mut spec = match name {
        "gp-prior" => gp_prior_problem(
            param(params, "lU", 0.25)?,
            param(params, "lL", 0.25)?,
            param(params, "seed", default_seed)?,
        )?,
        "bg" => BenchmarkSpec::new("bg", (1, 1), (0, 0), 100, Transform::SignedLog1p, Arc::new(Bg)),
        "sb" => BenchmarkSpec::new("sb", (1, 1), (0, 0), 100, Transform::SignedLog1p, Arc::new(Sb)),
        "smd01" => smd(Smd::S01, "smd01"),
        "smd02" => smd(Smd::S02, "smd02"),
        "smd03" => smd(Smd::S03, "smd03"),
        "smd09" => smd(Smd::S09, "smd09"),
        "smd10" => smd(Smd::S10, "smd10"),
        "smd11" => smd(Smd::S11, "smd11"),
        "smd12" => smd(Smd::S12, "smd12"),
        other => return Err(Error::Usage(format!("unknown problem `{other}`"))),
    };
    if let Some(g) = params.get("grid") {
        let n: usize = g
            .parse()
            .ok()
            .filter(|n| *n >= 1)
            .ok_or_else(|| Error::Usage(format!("bad grid size `{g}`")))?;
        spec = spec.with_grid(n);
        spec.params.insert("grid".into(), n.to_string());
    }
    Ok(spec)
}

// ------------------------------------------------------- ground truth --

/// Exact pool scan of everything the regret needs.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub grid: GridSpec,
    /// `f*`: best `f(x, θ*(x))` over upper-feasible `x`.
    pub f_star: f64,
    pub x_star_index: usize,
    /// `θ*(x)` grid index per grid `x`.
    pub theta_star_table: Vec<usize>,
    pub min_f: f64,
    pub min_g_per_x: Vec<f64>,
    /// `max(0, −c)` maximized over the pool, upper constraints first.
    pub max_constraint_violation: Vec<f64>,
    /// Transformed values on the pool, `x`-major.
    pub f_table: Vec<f64>,
    pub g_table: Vec<f64>,
    /// Per pool point, upper then lower constraint values.
    pub c_table: Vec<Vec<f64>>,
}

fn first_max<I: IntoIterator<Item = (usize, f64)>>(it: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in it {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

pub fn compute_ground_truth(spec: &BenchmarkSpec) -> GroundTruth {
    let grid = spec.grid.clone();
    let (nx, nt) = (grid.x_grid.len(), grid.theta_grid.len());
    let nu = spec.n_upper;
    let vals: Vec<Values> = (0..nx * nt)
        .into_par_iter()
        .map(|p| {
            let (i, j) = grid.split(p);
            spec.evaluate(&QueryPoint::new(grid.x_grid[i].clone(), grid.theta_grid[j].clone()))
        })
        .collect();
    let lower_ok = |p: usize| vals[p].cl.iter().all(|c| *c >= 0.0);
    let upper_ok = |p: usize| vals[p].cu.iter().all(|c| *c >= 0.0);
    let theta_star_table: Vec<usize> = (0..nx)
        .map(|i| {
            first_max((0..nt).filter(|&j| lower_ok(grid.index(i, j))).map(|j| (j, vals[grid.index(i, j)].g)))
                .or_else(|| first_max((0..nt).map(|j| (j, vals[grid.index(i, j)].g))))
                .expect("non-empty grid")
                .0
        })
        .collect();
    let on_curve = |i: usize| grid.index(i, theta_star_table[i]);
    let (x_star_index, f_star) = first_max(
        (0..nx)
            .filter(|&i| upper_ok(on_curve(i)))
            .map(|i| (i, vals[on_curve(i)].f)),
    )
    .or_else(|| first_max((0..nx).map(|i| (i, vals[on_curve(i)].f))))
    .expect("non-empty grid");
    let min_f = vals.iter().map(|v| v.f).fold(f64::INFINITY, f64::min);
    let min_g_per_x = (0..nx)
        .map(|i| (0..nt).map(|j| vals[grid.index(i, j)].g).fold(f64::INFINITY, f64::min))
        .collect();
    let n_c = nu + spec.n_lower;
    let mut max_constraint_violation = vec![0.0f64; n_c];
    let c_table: Vec<Vec<f64>> = vals.iter().map(|v| v.cu.iter().chain(&v.cl).copied().collect()).collect();
    for cs in &c_table {
        for (m, c) in cs.iter().enumerate() {
            max_constraint_violation[m] = max_constraint_violation[m].max((-c).max(0.0));
        }
    }
    GroundTruth {
        f_table: vals.iter().map(|v| v.f).collect(),
        g_table: vals.iter().map(|v| v.g).collect(),
        c_table,
        grid,
        f_star,
        x_star_index,
        theta_star_table,
        min_f,
        min_g_per_x,
        max_constraint_violation,
    }
}
