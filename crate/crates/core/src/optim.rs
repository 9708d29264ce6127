//! Small box-constrained local optimizers.

/// Outcome of a local ascent.
#[derive(Debug, Clone)]
pub struct Ascent {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct AscentOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient norm falls below this.
    pub grad_tol: f64,
    /// Stop when an accepted step moves less than this.
    pub step_tol: f64,
}

impl Default for AscentOptions {
    fn default() -> Self {
        AscentOptions {
            max_iter: 100,
            grad_tol: 1e-8,
            step_tol: 1e-12,
        }
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for ((v, l), h) in x.iter_mut().zip(lo).zip(hi) {
        *v = v.clamp(*l, *h);
    }
}

/// Zeroes gradient components that point out of the box at active bounds.
fn free_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lo.iter().zip(hi))
        .map(|((&xi, &gi), (&l, &h))| {
            if (xi <= l && gi < 0.0) || (xi >= h && gi > 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Projected quasi-Newton (BFGS) ascent with Armijo backtracking.
///
/// `f` returns the objective and its gradient, or `None` when the point is
/// not evaluable; such points are treated as failed line-search trials.
/// The returned value is never below `f(x0)`.
pub fn maximize_in_box<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: AscentOptions,
) -> Option<Ascent>
where
    F: FnMut(&[f64]) -> Option<(f64, Vec<f64>)>,
{
    let d = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x)?;
    if !fx.is_finite() {
        return None;
    }
    // Inverse Hessian approximation of -f.
    let mut h = identity(d);
    let mut iterations = 0;
    for it in 0..opts.max_iter {
        iterations = it + 1;
        let gf = free_gradient(&x, &g, lo, hi);
        if norm(&gf) < opts.grad_tol {
            break;
        }
        let mut dir = mat_vec(&h, &gf);
        for i in 0..d {
            if gf[i] == 0.0 {
                dir[i] = 0.0;
            }
        }
        if dot(&dir, &gf) <= 0.0 {
            h = identity(d);
            dir = gf.clone();
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut xn: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            project(&mut xn, lo, hi);
            let step: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
            if norm(&step) < opts.step_tol {
                break;
            }
            if let Some((fn_, gn)) = f(&xn) {
                if fn_.is_finite() && fn_ >= fx + 1e-4 * dot(&g, &step) {
                    accepted = Some((xn, fn_, gn, step));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            break;
        };
        // y is the gradient change of -f.
        let y: Vec<f64> = g.iter().zip(&gn).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            bfgs_update(&mut h, &s, &y, sy);
        }
        let moved = norm(&s);
        x = xn;
        fx = fn_;
        g = gn;
        if moved < opts.step_tol {
            break;
        }
    }
    Some(Ascent {
        x,
        value: fx,
        iterations,
    })
}

fn identity(d: usize) -> Vec<Vec<f64>> {
    (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let d = s.len();
    let hy = mat_vec(h, y);
    let yhy = dot(y, &hy);
    let rho = 1.0 / sy;
    for i in 0..d {
        for j in 0..d {
            h[i][j] += (1.0 + yhy * rho) * rho * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
        }
    }
}

fn mat_vec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter().map(|row| dot(row, v)).collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Radical-inverse Halton point `index` in `dim` dimensions.
pub fn halton(index: u64, dim: usize) -> Vec<f64> {
    const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];
    (0..dim)
        .map(|k| {
            let base = PRIMES[k % PRIMES.len()];
            let mut f = 1.0;
            let mut r = 0.0;
            let mut i = index + 1;
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        })
        .collect()
}

/// Halton points with a random Cranley–Patterson shift, in `[0, 1)^dim`.
pub fn shifted_halton(count: usize, dim: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..count as u64)
        .map(|i| {
            halton(i, dim)
                .into_iter()
                .zip(shift)
                .map(|(h, s)| (h + s).fract())
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_interior_maximum_of_quadratic() {
        let f = |x: &[f64]| {
            let v = -(x[0] - 0.3).powi(2) - 4.0 * (x[1] - 0.7).powi(2) + 0.5 * x[0] * x[1];
            let g = vec![-2.0 * (x[0] - 0.3) + 0.5 * x[1], -8.0 * (x[1] - 0.7) + 0.5 * x[0]];
            Some((v, g))
        };
        let r = maximize_in_box(f, &[0.0, 0.0], &[-5.0, -5.0], &[5.0, 5.0], AscentOptions::default())
            .unwrap();
        // Stationary point of the quadratic: solve the 2×2 system.
        // -2x + 0.5y = -0.6 ; 0.5x - 8y = -5.6
        let det = 16.0 - 0.25;
        let xs = (-0.6 * -8.0 - 0.5 * -5.6) / det;
        let ys = (-2.0 * -5.6 - 0.5 * -0.6) / det;
        assert!((r.x[0] - xs).abs() < 1e-6 && (r.x[1] - ys).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn stops_at_active_bound() {
        let f = |x: &[f64]| Some((x[0] - x[1] * x[1], vec![1.0, -2.0 * x[1]]));
        let r = maximize_in_box(f, &[0.2, 0.5], &[0.0, -1.0], &[1.0, 1.0], AscentOptions::default())
            .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-12);
        assert!(r.x[1].abs() < 1e-6);
    }

    #[test]
    fn never_below_start() {
        let f = |x: &[f64]| Some(((10.0 * x[0]).sin(), vec![10.0 * (10.0 * x[0]).cos()]));
        for i in 0..20 {
            let x0 = [i as f64 / 20.0];
            let start = (10.0 * x0[0]).sin();
            let r = maximize_in_box(f, &x0, &[0.0], &[1.0], AscentOptions::default()).unwrap();
            assert!(r.value >= start);
        }
    }

    #[test]
    fn halton_first_points() {
        assert_eq!(halton(0, 2), vec![0.5, 1.0 / 3.0]);
        assert_eq!(halton(1, 2), vec![0.25, 2.0 / 3.0]);
    }
}
