//! Type-II maximum likelihood for the kernel hyperparameters.
//!
//! The search runs over `(ln ℓ, ln σ², ln σ²_noise)` with the prior mean
//! profiled out in closed form (`m = 1ᵀK⁻¹y / 1ᵀK⁻¹1`), so every candidate is
//! scored at its best constant mean.

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

use super::{GpHyperparams, LENGTHSCALE_BOUNDS, NOISE_FLOOR, OUTPUT_SCALE_BOUNDS};
use crate::linalg::{cho_solve, cholesky_jittered};
use crate::optim::{maximize_in_box, AscentOptions};

const NOISE_CEILING: f64 = 1e6;
const RESTARTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOutcome {
    pub hyper: GpHyperparams,
    pub log_likelihood: f64,
    /// Set when no restart produced a finite likelihood and `init` was
    /// returned unchanged.
    pub fell_back: bool,
}

/// Log marginal likelihood at fixed hyperparameters (mean not profiled).
pub fn log_marginal_likelihood(points: &[Vec<f64>], targets: &[f64], h: &GpHyperparams) -> f64 {
    let Some(k) = kernel_matrix(points, h.lengthscale, h.output_scale, h.noise_variance) else {
        return f64::NAN;
    };
    let Ok((l, _)) = cholesky_jittered(&k) else {
        return f64::NAN;
    };
    let r = DVector::from_iterator(targets.len(), targets.iter().map(|y| y - h.prior_mean));
    let alpha = cho_solve(&l, &r);
    -0.5 * r.dot(&alpha) - log_det_half(&l) - 0.5 * targets.len() as f64 * (2.0 * PI).ln()
}

fn kernel_matrix(points: &[Vec<f64>], ell: f64, s2: f64, noise: f64) -> Option<DMatrix<f64>> {
    let h = GpHyperparams::new(0.0, ell, s2, noise);
    let n = points.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = h.kernel(&points[i], &points[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise;
    }
    k.iter().all(|v| v.is_finite()).then_some(k)
}

fn log_det_half(l: &DMatrix<f64>) -> f64 {
    l.diagonal().iter().map(|d| d.ln()).sum()
}

struct Profiled {
    value: f64,
    grad: Vec<f64>,
    mean: f64,
}

/// Profiled likelihood and its gradient with respect to the log parameters.
fn profiled(points: &[Vec<f64>], y: &DVector<f64>, psi: &[f64]) -> Option<Profiled> {
    let (ell, s2, noise) = (psi[0].exp(), psi[1].exp(), psi[2].exp());
    let n = points.len();
    let k = kernel_matrix(points, ell, s2, noise)?;
    let (l, _) = cholesky_jittered(&k).ok()?;
    let ones = DVector::from_element(n, 1.0);
    let kinv_1 = cho_solve(&l, &ones);
    let kinv_y = cho_solve(&l, y);
    let mean = kinv_y.sum() / kinv_1.sum();
    let r = y.add_scalar(-mean);
    let alpha = cho_solve(&l, &r);
    let value = -0.5 * r.dot(&alpha) - log_det_half(&l) - 0.5 * n as f64 * (2.0 * PI).ln();
    if !value.is_finite() {
        return None;
    }
    // Envelope theorem: the profiled gradient equals the partial gradient at
    // the optimal mean. ∂L/∂ψ = ½ tr((ααᵀ − K⁻¹) ∂K/∂ψ).
    let kinv = {
        let mut m = DMatrix::identity(n, n);
        l.solve_lower_triangular_mut(&mut m);
        l.tr_solve_lower_triangular_mut(&mut m);
        m
    };
    let inv_l2 = 1.0 / (ell * ell);
    let (mut g_ell, mut g_s2, mut g_noise) = (0.0, 0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = alpha[i] * alpha[j] - kinv[(i, j)];
            let d2 = super::sq_dist(&points[i], &points[j]);
            let kf = s2 * (-0.5 * d2 * inv_l2).exp();
            g_ell += w * kf * d2 * inv_l2;
            g_s2 += w * kf;
            if i == j {
                g_noise += w * noise;
            }
        }
    }
    Some(Profiled {
        value,
        grad: vec![0.5 * g_ell, 0.5 * g_s2, 0.5 * g_noise],
        mean,
    })
}

/// Fits hyperparameters by multi-start ascent of the marginal likelihood.
///
/// The first restart starts at `init`; the result's likelihood is never
/// below the likelihood of `init`. Fewer than two observations leave `init`
/// unchanged.
pub fn fit_hyperparameters(points: &[Vec<f64>], targets: &[f64], init: &GpHyperparams) -> FitOutcome {
    let init_ll = log_marginal_likelihood(points, targets, init);
    if points.len() < 2 {
        return FitOutcome {
            hyper: *init,
            log_likelihood: init_ll,
            fell_back: false,
        };
    }
    let y = DVector::from_row_slice(targets);
    let lo = [
        LENGTHSCALE_BOUNDS.0.ln(),
        OUTPUT_SCALE_BOUNDS.0.ln(),
        NOISE_FLOOR.ln(),
    ];
    let hi = [
        LENGTHSCALE_BOUNDS.1.ln(),
        OUTPUT_SCALE_BOUNDS.1.ln(),
        NOISE_CEILING.ln(),
    ];
    let n = targets.len() as f64;
    let ym = targets.iter().sum::<f64>() / n;
    let var = (targets.iter().map(|t| (t - ym).powi(2)).sum::<f64>() / n).max(1e-4);
    let mut starts = vec![[
        init.lengthscale.ln(),
        init.output_scale.ln(),
        init.noise_variance.max(NOISE_FLOOR).ln(),
    ]];
    for &ell in &[0.1f64, 0.3, 1.0, 0.05][..RESTARTS - 1] {
        starts.push([ell.ln(), var.ln(), (1e-3 * var).max(NOISE_FLOOR).ln()]);
    }

    let opts = AscentOptions {
        max_iter: 80,
        grad_tol: 1e-6,
        step_tol: 1e-10,
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    for s in &starts {
        let Some(run) = maximize_in_box(
            |psi| profiled(points, &y, psi).map(|p| (p.value, p.grad)),
            s,
            &lo,
            &hi,
            opts,
        ) else {
            continue;
        };
        if best.as_ref().is_none_or(|(v, _)| run.value > *v) {
            best = Some((run.value, run.x));
        }
    }

    let fallback = |fell_back| FitOutcome {
        hyper: *init,
        log_likelihood: init_ll,
        fell_back,
    };
    let Some((_, psi)) = best else {
        log::warn!("marginal likelihood non-finite at every restart; keeping initial hyperparameters");
        return fallback(true);
    };
    let Some(p) = profiled(points, &y, &psi) else {
        return fallback(true);
    };
    let hyper = GpHyperparams::new(p.mean, psi[0].exp(), psi[1].exp(), psi[2].exp());
    let ll = log_marginal_likelihood(points, targets, &hyper);
    // Guard against clamping round-off; the contract is monotone improvement.
    if init_ll.is_finite() && !(ll >= init_ll) {
        return fallback(false);
    }
    FitOutcome {
        hyper,
        log_likelihood: ll,
        fell_back: false,
    }
}
