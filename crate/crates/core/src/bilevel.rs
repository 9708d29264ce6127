//! Solvers for the sampled white-box bilevel problem
//! `max_x f̃(x, θ̃*(x))` with `θ̃*(x) = argmax_θ g̃(x, θ)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::symmetric_condition_number;
use crate::optim::{maximize_in_box, shifted_halton, AscentOptions};
use crate::path::Surface;

/// Hessians with a larger condition number count as singular.
pub const MAX_HESSIAN_CONDITION: f64 = 1e12;

/// A coordinate closer than this to 0 or 1 is treated as an active bound.
const BOUND_TOL: f64 = 1e-9;

/// Product grid over `[0,1]^{d_X} × [0,1]^{d_Θ}`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub points_per_dim: usize,
    pub x_grid: Vec<Vec<f64>>,
    pub theta_grid: Vec<Vec<f64>>,
}

/// `n` evenly spaced values covering `[0, 1]`; a single point sits at 0.5.
pub fn linspace01(n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Lexicographic product grid, first coordinate slowest.
pub fn product_grid(points_per_dim: usize, dim: usize) -> Vec<Vec<f64>> {
    let axis = linspace01(points_per_dim);
    let mut out: Vec<Vec<f64>> = vec![Vec::new()];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&a| {
                    let mut q = p.clone();
                    q.push(a);
                    q
                })
            })
            .collect();
    }
    out
}

impl GridSpec {
    pub fn uniform(points_per_dim: usize, dim_x: usize, dim_theta: usize) -> Self {
        GridSpec {
            points_per_dim,
            x_grid: product_grid(points_per_dim, dim_x),
            theta_grid: product_grid(points_per_dim, dim_theta),
        }
    }

    pub fn pool_len(&self) -> usize {
        self.x_grid.len() * self.theta_grid.len()
    }

    /// Pool index of grid pair `(ix, it)`.
    pub fn index(&self, ix: usize, it: usize) -> usize {
        ix * self.theta_grid.len() + it
    }

    pub fn split(&self, pool_index: usize) -> (usize, usize) {
        (pool_index / self.theta_grid.len(), pool_index % self.theta_grid.len())
    }
}

/// One sampled optimum `(x*, θ*, f*, g*)`. Grid indices are set when the
/// sample comes from a grid solve.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimumSample {
    pub x_star: Vec<f64>,
    pub theta_star: Vec<f64>,
    pub f_star: f64,
    pub g_star: f64,
    pub x_index: Option<usize>,
    pub theta_index: Option<usize>,
}

/// Index of the largest entry, lowest index on ties. `None` when empty or
/// when every entry is NaN.
fn argmax_first<I: IntoIterator<Item = f64>>(values: I) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, v) in values.into_iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

/// Grid argmax of `g̃(x, ·)`; ties go to the lowest index.
pub fn inner_argmax_grid<S: Surface + ?Sized>(g: &S, x: &[f64], theta_grid: &[Vec<f64>]) -> (usize, f64) {
    assert!(!theta_grid.is_empty(), "empty θ grid");
    argmax_first(theta_grid.iter().map(|t| g.value(x, t))).expect("finite path values")
}

/// Grid bilevel solution from precomputed tables (`x × θ`).
///
/// `lower_ok(ix, it)` marks lower-level feasible pairs and `upper_ok` the
/// upper-level feasible ones. An `x` with no feasible `θ` falls back to the
/// unconstrained inner argmax; if no `x` is upper-feasible the outer argmax
/// runs over all `x`. Returns `(x index, θ*(x) index per x)`.
pub fn solve_tables_constrained(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    lower_ok: &dyn Fn(usize, usize) -> bool,
    upper_ok: &dyn Fn(usize, usize) -> bool,
) -> (usize, Vec<usize>) {
    let (nx, nt) = g.shape();
    assert!(nx > 0 && nt > 0 && f.shape() == g.shape());
    let inner: Vec<usize> = (0..nx)
        .map(|i| {
            let feasible = argmax_first((0..nt).map(|j| if lower_ok(i, j) { g[(i, j)] } else { f64::NAN }));
            match feasible {
                Some((j, _)) => j,
                None => argmax_first((0..nt).map(|j| g[(i, j)])).expect("finite table").0,
            }
        })
        .collect();
    let outer = argmax_first((0..nx).map(|i| if upper_ok(i, inner[i]) { f[(i, inner[i])] } else { f64::NAN }))
        .or_else(|| argmax_first((0..nx).map(|i| f[(i, inner[i])])))
        .expect("finite table")
        .0;
    (outer, inner)
}

pub fn solve_tables(f: &DMatrix<f64>, g: &DMatrix<f64>) -> (usize, Vec<usize>) {
    solve_tables_constrained(f, g, &|_, _| true, &|_, _| true)
}

/// Exhaustive grid solve of the sampled bilevel problem.
pub fn solve_bilevel_grid<F: Surface + ?Sized, G: Surface + ?Sized>(
    f: &F,
    g: &G,
    grid: &GridSpec,
) -> OptimumSample {
    let ft = f.table(&grid.x_grid, &grid.theta_grid);
    let gt = g.table(&grid.x_grid, &grid.theta_grid);
    let (ix, inner) = solve_tables(&ft, &gt);
    sample_from_tables(&ft, &gt, grid, ix, inner[ix])
}

pub fn sample_from_tables(
    f: &DMatrix<f64>,
    g: &DMatrix<f64>,
    grid: &GridSpec,
    ix: usize,
    it: usize,
) -> OptimumSample {
    OptimumSample {
        x_star: grid.x_grid[ix].clone(),
        theta_star: grid.theta_grid[it].clone(),
        f_star: f[(ix, it)],
        g_star: g[(ix, it)],
        x_index: Some(ix),
        theta_index: Some(it),
    }
}

fn free_theta(theta: &[f64], grad_theta: &[f64]) -> Vec<usize> {
    theta
        .iter()
        .zip(grad_theta)
        .enumerate()
        .filter(|(_, (t, gt))| {
            let at_lo = **t <= BOUND_TOL && **gt <= 0.0;
            let at_hi = **t >= 1.0 - BOUND_TOL && **gt >= 0.0;
            !(at_lo || at_hi)
        })
        .map(|(i, _)| i)
        .collect()
}

/// `∂θ̃*/∂xᵀ = −H_θθ⁻¹ H_θx`, `d_Θ × d_X`.
///
/// Coordinates of `θ*` resting on a bound of the unit box do not move with
/// `x`; their rows are zero and the system is solved on the free block.
pub fn theta_star_jacobian<G: Surface + ?Sized>(g: &G, x: &[f64], theta_star: &[f64]) -> Result<DMatrix<f64>> {
    let dx = g.dim_x();
    let dt = g.dim_theta();
    let grad = g.grad(x, theta_star);
    let gtheta: Vec<f64> = grad.iter().skip(dx).copied().collect();
    let free = free_theta(theta_star, &gtheta);
    let mut jac = DMatrix::zeros(dt, dx);
    if free.is_empty() {
        return Ok(jac);
    }
    let h = g.hess_theta(x, theta_star);
    let c = g.cross_hess(x, theta_star);
    let hf = DMatrix::from_fn(free.len(), free.len(), |a, b| h[(free[a], free[b])]);
    let cf = DMatrix::from_fn(free.len(), dx, |a, b| c[(free[a], b)]);
    let condition = symmetric_condition_number(&hf);
    if !(condition < MAX_HESSIAN_CONDITION) {
        return Err(Error::SingularHessian { condition });
    }
    let sol = hf
        .lu()
        .solve(&cf)
        .ok_or(Error::SingularHessian { condition })?;
    for (a, &r) in free.iter().enumerate() {
        for b in 0..dx {
            jac[(r, b)] = -sol[(a, b)];
        }
    }
    Ok(jac)
}

/// `∂f̃/∂x + (∂θ̃*/∂xᵀ)ᵀ ∂f̃/∂θ` at `(x, θ*)`.
pub fn hyper_gradient<F: Surface + ?Sized, G: Surface + ?Sized>(
    f: &F,
    g: &G,
    x: &[f64],
    theta_star: &[f64],
) -> Result<DVector<f64>> {
    let jac = theta_star_jacobian(g, x, theta_star)?;
    Ok(chain(f, x, theta_star, &jac))
}

fn chain<F: Surface + ?Sized>(f: &F, x: &[f64], theta: &[f64], jac: &DMatrix<f64>) -> DVector<f64> {
    let dx = f.dim_x();
    let grad = f.grad(x, theta);
    let gx = grad.rows(0, dx).into_owned();
    let gt = grad.rows(dx, grad.len() - dx).into_owned();
    gx + jac.tr_mul(&gt)
}

#[derive(Debug, Clone, Copy)]
pub struct ContinuousOptions {
    pub n_starts: usize,
    /// Per-dimension size of the coarse grid used to seed inner solves and
    /// one outer start.
    pub seed_grid: usize,
    pub inner: AscentOptions,
    pub outer: AscentOptions,
}

impl Default for ContinuousOptions {
    fn default() -> Self {
        ContinuousOptions {
            n_starts: 10,
            seed_grid: 20,
            inner: AscentOptions {
                max_iter: 200,
                grad_tol: 1e-8,
                step_tol: 1e-12,
            },
            outer: AscentOptions {
                max_iter: 100,
                grad_tol: 1e-8,
                step_tol: 1e-12,
            },
        }
    }
}

/// Local ascent of `g̃(x, ·)` over the unit box from `theta0`.
pub fn inner_ascent<G: Surface + ?Sized>(g: &G, x: &[f64], theta0: &[f64], opts: AscentOptions) -> (Vec<f64>, f64) {
    let dx = g.dim_x();
    let dt = g.dim_theta();
    let lo = vec![0.0; dt];
    let hi = vec![1.0; dt];
    let run = maximize_in_box(
        |t| {
            let v = g.value(x, t);
            let gr = g.grad(x, t);
            Some((v, gr.iter().skip(dx).copied().collect()))
        },
        theta0,
        &lo,
        &hi,
        opts,
    )
    .expect("path values are finite");
    (run.x, run.value)
}

/// Continuous inner solve seeded from the best point of a θ grid.
pub fn inner_solve<G: Surface + ?Sized>(
    g: &G,
    x: &[f64],
    theta_seeds: &[Vec<f64>],
    opts: AscentOptions,
) -> (Vec<f64>, f64) {
    let (j, _) = inner_argmax_grid(g, x, theta_seeds);
    inner_ascent(g, x, &theta_seeds[j], opts)
}

/// `(θ̃*(x), f̃(x, θ̃*(x)))` with a fresh seeded inner solve.
pub fn bilevel_value<F: Surface + ?Sized, G: Surface + ?Sized>(
    f: &F,
    g: &G,
    x: &[f64],
    theta_seeds: &[Vec<f64>],
    opts: AscentOptions,
) -> (Vec<f64>, f64) {
    let (theta, _) = inner_solve(g, x, theta_seeds, opts);
    let v = f.value(x, &theta);
    (theta, v)
}

struct Best {
    value: f64,
    x: Vec<f64>,
    theta: Vec<f64>,
}

/// Projected ascent of `x ↦ f̃(x, θ̃*(x))` from one start. Inner solves are
/// warm-started from the previous `θ̃*`. Returns the best evaluated point
/// and whether any hypergradient had an invertible inner Hessian.
pub fn ascend_from<F: Surface + ?Sized, G: Surface + ?Sized>(
    f: &F,
    g: &G,
    x0: &[f64],
    theta0: &[f64],
    opts: &ContinuousOptions,
) -> (Vec<f64>, Vec<f64>, f64, bool) {
    let dx = f.dim_x();
    let lo = vec![0.0; dx];
    let hi = vec![1.0; dx];
    let mut warm = theta0.to_vec();
    let mut best: Option<Best> = None;
    let mut any_ok = false;
    let _ = maximize_in_box(
        |x| {
            let (theta, _) = inner_ascent(g, x, &warm, opts.inner);
            let v = f.value(x, &theta);
            let grad = match theta_star_jacobian(g, x, &theta) {
                Ok(jac) => {
                    any_ok = true;
                    chain(f, x, &theta, &jac)
                }
                Err(e) => {
                    log::debug!("hypergradient fallback to zero Jacobian: {e}");
                    chain(f, x, &theta, &DMatrix::zeros(theta.len(), dx))
                }
            };
            if best.as_ref().is_none_or(|b| v > b.value) {
                best = Some(Best {
                    value: v,
                    x: x.to_vec(),
                    theta: theta.clone(),
                });
            }
            warm = theta;
            Some((v, grad.iter().copied().collect()))
        },
        x0,
        &lo,
        &hi,
        opts.outer,
    );
    let b = best.expect("start point is always evaluated");
    (b.x, b.theta, b.value, any_ok)
}

/// Multi-start continuous solve. One start is the coarse-grid solution;
/// the others come from a randomly shifted Halton sequence.
pub fn solve_bilevel_continuous<F: Surface + ?Sized, G: Surface + ?Sized, R: Rng + ?Sized>(
    f: &F,
    g: &G,
    opts: &ContinuousOptions,
    rng: &mut R,
) -> OptimumSample {
    assert!(opts.n_starts >= 1, "at least one start");
    let dx = f.dim_x();
    let dt = f.dim_theta();
    let coarse = GridSpec::uniform(opts.seed_grid.max(2), dx, dt);
    let seed = solve_bilevel_grid(f, g, &coarse);
    let shift: Vec<f64> = (0..dx).map(|_| rng.random()).collect();
    let mut starts = vec![seed.x_star.clone()];
    starts.extend(shifted_halton(opts.n_starts - 1, dx, &shift));

    let mut best: Option<Best> = None;
    let mut any_ok = false;
    for (s, x0) in starts.iter().enumerate() {
        let theta0 = if s == 0 {
            seed.theta_star.clone()
        } else {
            coarse.theta_grid[inner_argmax_grid(g, x0, &coarse.theta_grid).0].clone()
        };
        let (x, theta, v, ok) = ascend_from(f, g, x0, &theta0, opts);
        any_ok |= ok;
        if best.as_ref().is_none_or(|b| v > b.value) {
            best = Some(Best { value: v, x, theta });
        }
    }
    if !any_ok {
        log::warn!("every inner Hessian was singular; using a dense grid solve");
        let dense = GridSpec::uniform(if dx + dt <= 2 { 200 } else { 30 }, dx, dt);
        let mut s = solve_bilevel_grid(f, g, &dense);
        s.x_index = None;
        s.theta_index = None;
        return s;
    }
    let b = best.expect("n_starts >= 1");
    let g_star = g.value(&b.x, &b.theta);
    OptimumSample {
        f_star: f.value(&b.x, &b.theta),
        g_star,
        x_star: b.x,
        theta_star: b.theta,
        x_index: None,
        theta_index: None,
    }
}
