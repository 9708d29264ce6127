//! Bilevel simple regret: level-wise normalized regrets and their running
//! minimum over the queried points.

use crate::benchmarks::{BenchmarkSpec, GroundTruth};
use crate::error::{Error, Result};
use crate::gp::QueryPoint;

/// Normalized regrets of one point, each in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Components {
    pub r_f: f64,
    pub r_g: f64,
    /// Upper constraints first, then lower.
    pub r_c: Vec<f64>,
}

impl Components {
    /// Worst component, the quantity minimized by the simple regret.
    pub fn worst(&self) -> f64 {
        self.r_c.iter().fold(self.r_f.max(self.r_g), |a, &b| a.max(b))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretEntry {
    pub iteration: usize,
    pub point: QueryPoint,
    pub r_f: f64,
    pub r_g: f64,
    pub r_c: Vec<f64>,
    pub cumulative_min_regret: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegretTrace {
    pub entries: Vec<RegretEntry>,
}

impl RegretTrace {
    /// Builds the trace for `(iteration, point)` pairs in query order.
    pub fn from_points(
        points: &[(usize, QueryPoint)],
        spec: &BenchmarkSpec,
        gt: &GroundTruth,
        pool_only: bool,
    ) -> Result<Self> {
        let mut best = f64::INFINITY;
        let mut entries = Vec::with_capacity(points.len());
        for (iteration, point) in points {
            let c = regret_components(point, spec, gt, pool_only)?;
            best = best.min(c.worst());
            entries.push(RegretEntry {
                iteration: *iteration,
                point: point.clone(),
                r_f: c.r_f,
                r_g: c.r_g,
                r_c: c.r_c,
                cumulative_min_regret: best,
            });
        }
        Ok(RegretTrace { entries })
    }

    pub fn final_regret(&self) -> Option<f64> {
        self.entries.last().map(|e| e.cumulative_min_regret)
    }
}

/// Index of `point` in the pool, by exact coordinate equality.
pub fn locate(gt: &GroundTruth, point: &QueryPoint) -> Option<usize> {
    let i = gt.grid.x_grid.iter().position(|x| *x == point.x)?;
    let j = gt.grid.theta_grid.iter().position(|t| *t == point.theta)?;
    Some(gt.grid.index(i, j))
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        (num / den).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// `(r_f, r_g, r_c)` for one point from noiseless values.
///
/// A point on the ground-truth pool reads the stored tables. Anywhere else
/// the point is evaluated directly and `θ*(x)` and `min_θ g(x, ·)` come
/// from a scan of the reference θ grid; with `pool_only` such a point is a
/// usage error.
pub fn regret_components(
    point: &QueryPoint,
    spec: &BenchmarkSpec,
    gt: &GroundTruth,
    pool_only: bool,
) -> Result<Components> {
    let (f, g, c, g_best, g_min) = match locate(gt, point) {
        Some(p) => {
            let (i, _) = gt.grid.split(p);
            let best = gt.grid.index(i, gt.theta_star_table[i]);
            (gt.f_table[p], gt.g_table[p], gt.c_table[p].clone(), gt.g_table[best], gt.min_g_per_x[i])
        }
        None if pool_only => {
            return Err(Error::Usage("regret point is not on the pool".into()));
        }
        None => {
            let v = spec.evaluate(point);
            let mut best_feasible: Option<f64> = None;
            let mut best_any = f64::NEG_INFINITY;
            let mut min_g = v.g;
            for t in &gt.grid.theta_grid {
                let w = spec.evaluate(&QueryPoint::new(point.x.clone(), t.clone()));
                min_g = min_g.min(w.g);
                best_any = best_any.max(w.g);
                if w.cl.iter().all(|c| *c >= 0.0) && best_feasible.is_none_or(|b| w.g > b) {
                    best_feasible = Some(w.g);
                }
            }
            let c = v.cu.iter().chain(&v.cl).copied().collect();
            (v.f, v.g, c, best_feasible.unwrap_or(best_any), min_g)
        }
    };
    Ok(Components {
        r_f: ratio((gt.f_star - f).max(0.0), gt.f_star - gt.min_f),
        r_g: ratio(g_best - g, g_best - g_min),
        r_c: c
            .iter()
            .zip(&gt.max_constraint_violation)
            .map(|(c, norm)| ratio((-c).max(0.0), *norm))
            .collect(),
    })
}

/// Running minimum of the worst component over `points`, one entry per
/// point.
pub fn bilevel_simple_regret(
    points: &[QueryPoint],
    spec: &BenchmarkSpec,
    gt: &GroundTruth,
    pool_only: bool,
) -> Result<Vec<f64>> {
    let mut best = f64::INFINITY;
    points
        .iter()
        .map(|p| {
            best = best.min(regret_components(p, spec, gt, pool_only)?.worst());
            Ok(best)
        })
        .collect()
}
