//! Closed-form moments of the truncated variational density and the
//! per-sample log-ratios built from them.

use crate::dual::Scalar;
use crate::normal::{self, LN_SQRT_2PI};

/// Standard deviations are floored here.
pub const S_FLOOR: f64 = 1e-9;

/// Probabilities are clamped below at this value.
pub const PROB_FLOOR: f64 = 1e-300;

/// `(m1, s1)`: truncated value given `y` and the optimum; `(m2, s2)`:
/// truncated value given the optimum; `(m3, s3)`: `y` given the optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedMoments<T = f64> {
    pub m1: T,
    pub s1: T,
    pub m2: T,
    pub s2: T,
    pub m3: T,
    pub s3: T,
}

/// Posterior (under `D_t`) summary of the three points entering one level:
/// the truncation point `a`, the candidate `b` and the sampled optimum
/// `s`. For the upper level `a = (x, θ*(x))`; for the lower level
/// `a = (x*, θ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriadStats<T = f64> {
    pub mu_a: T,
    pub var_a: T,
    pub mu_b: T,
    pub var_b: T,
    pub mu_s: T,
    pub var_s: T,
    pub cov_ab: T,
    pub cov_as: T,
    pub cov_bs: T,
    /// Observation noise variance of `y` at `b`.
    pub noise: f64,
    /// Noise variance of the augmented optimum observation.
    pub aug: f64,
    /// Sampled optimal value `f*` or `g*`.
    pub v_star: f64,
}

fn sd<T: Scalar>(var: T) -> T {
    var.floor_at(S_FLOOR * S_FLOOR).sqrt()
}

/// Moments by 2×2 conditioning on `(y_b, v*)`. `None` when the 2×2 system
/// is not positive definite.
pub fn triad_moments<T: Scalar>(st: &TriadStats<T>, y: T) -> Option<TruncatedMoments<T>> {
    let one = |v: f64| T::from_f64(v);
    let s11 = st.var_b + one(st.noise);
    let s12 = st.cov_bs;
    let s22 = st.var_s + one(st.aug);
    let det = s11 * s22 - s12 * s12;
    if !(s22.value() > 0.0 && det.value() > 0.0) {
        return None;
    }
    let r1 = y - st.mu_b;
    let r2 = one(st.v_star) - st.mu_s;
    let (c1, c2) = (st.cov_ab, st.cov_as);
    let w1 = (s22 * c1 - s12 * c2) / det;
    let w2 = (s11 * c2 - s12 * c1) / det;
    Some(TruncatedMoments {
        m1: st.mu_a + w1 * r1 + w2 * r2,
        s1: sd(st.var_a - (w1 * c1 + w2 * c2)),
        m2: st.mu_a + c2 / s22 * r2,
        s2: sd(st.var_a - c2 * c2 / s22),
        m3: st.mu_b + s12 / s22 * r2,
        s3: sd(s11 - s12 * s12 / s22),
    })
}

/// Moments of `y | D_t⁺` only, for samples whose full triad degenerates.
fn y_given_optimum<T: Scalar>(st: &TriadStats<T>) -> (T, T) {
    let s22 = st.var_s + T::from_f64(st.aug);
    let r2 = T::from_f64(st.v_star) - st.mu_s;
    (
        st.mu_b + st.cov_bs / s22 * r2,
        sd(st.var_b + T::from_f64(st.noise) - st.cov_bs * st.cov_bs / s22),
    )
}

/// `ln N(y; m, s²)` with `s` a standard deviation.
pub fn log_normal<T: Scalar>(y: T, m: T, s: T) -> T {
    let z = (y - m) / s;
    T::from_f64(-0.5) * z * z - T::from_f64(LN_SQRT_2PI) - s.ln()
}

/// Log of the truncated density of `y` at one level. At the optimum's own
/// `x` (upper) or `θ` (lower) the truncation factors drop out.
pub fn truncated_log_density<T: Scalar>(m: &TruncatedMoments<T>, y: T, v_star: f64, at_optimum: bool) -> T {
    let base = log_normal(y, m.m3, m.s3);
    if at_optimum {
        return base;
    }
    let v = T::from_f64(v_star);
    ((v - m.m1) / m.s1).log_cdf() + base - ((v - m.m2) / m.s2).log_cdf()
}

/// Upper-level form; identical algebra to the lower level.
pub fn truncated_log_density_f(m: &TruncatedMoments, y: f64, f_star: f64, at_optimum_x: bool) -> f64 {
    truncated_log_density(m, y, f_star, at_optimum_x)
}

pub fn truncated_log_density_g(m: &TruncatedMoments, y: f64, g_star: f64, at_optimum_theta: bool) -> f64 {
    truncated_log_density(m, y, g_star, at_optimum_theta)
}

/// `ln p(y | D_t)` for the candidate.
pub fn predictive_log_density<T: Scalar>(st: &TriadStats<T>, y: T) -> T {
    log_normal(y, st.mu_b, sd(st.var_b + T::from_f64(st.noise)))
}

/// One Monte-Carlo summand of one level:
/// `ln q(y | truncation, D_t⁺) − ln p(y | D_t)`.
pub fn level_log_ratio<T: Scalar>(st: &TriadStats<T>, y: T, at_optimum: bool) -> T {
    let lp = predictive_log_density(st, y);
    let lq = match triad_moments(st, y) {
        Some(m) => truncated_log_density(&m, y, st.v_star, at_optimum),
        None => {
            let (m3, s3) = y_given_optimum(st);
            log_normal(y, m3, s3)
        }
    };
    lq - lp
}

/// A constraint's posterior at the truncation point `a`, conditioned on
/// its noisy observation `y_c` at the candidate `b` (under `D_t`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintStats<T = f64> {
    pub mu_a: T,
    pub var_a: T,
    pub mu_b: T,
    pub var_b: T,
    pub cov_ab: T,
    pub noise: f64,
}

impl<T: Scalar> ConstraintStats<T> {
    /// `(m^c, s^c)` given `y_c`.
    pub fn conditioned(&self, y_c: T) -> (T, T) {
        let denom = self.var_b + T::from_f64(self.noise);
        (
            self.mu_a + self.cov_ab / denom * (y_c - self.mu_b),
            sd(self.var_a - self.cov_ab * self.cov_ab / denom),
        )
    }

    pub fn unconditioned(&self) -> (T, T) {
        (self.mu_a, sd(self.var_a))
    }

    pub fn log_density(&self, y_c: T) -> T {
        log_normal(y_c, self.mu_b, sd(self.var_b + T::from_f64(self.noise)))
    }
}

/// Objective moments and per-constraint moments for one level.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintTruncation {
    pub objective_moments: TruncatedMoments,
    pub constraint_means: Vec<f64>,
    pub constraint_sds: Vec<f64>,
}

/// `ln(1 − (1 − Φ(u)) Π_n (1 − Φ(−m_n/s_n)))`, clamped at `ln PROB_FLOOR`.
pub fn log_truncation_prob<T: Scalar>(u: T, constraints: &[(T, T)]) -> T {
    let mut log_miss = (-u).log_cdf();
    for &(m, s) in constraints {
        log_miss = log_miss + (m / s).log_cdf();
    }
    let v = log_miss.value();
    // ln(1 − e^v)
    let out = if v > -std::f64::consts::LN_2 {
        (-(log_miss.exp() - T::from_f64(1.0))).ln()
    } else {
        (T::from_f64(1.0) - log_miss.exp()).ln()
    };
    if !(out.value() >= PROB_FLOOR.ln()) {
        T::from_f64(PROB_FLOOR.ln())
    } else {
        out
    }
}

/// The truncation probability of the upper level, using `(m1, s1)` and the
/// conditioned constraint moments when `use_conditioned`, else `(m2, s2)`
/// and the unconditioned ones.
pub fn constrained_truncation_prob_upper(ct: &ConstraintTruncation, f_star: f64, use_conditioned: bool) -> f64 {
    let m = &ct.objective_moments;
    let (mean, sd) = if use_conditioned { (m.m1, m.s1) } else { (m.m2, m.s2) };
    let u = (f_star - mean) / sd;
    if ct.constraint_means.is_empty() {
        return normal::cdf(u).clamp(PROB_FLOOR, 1.0);
    }
    let cs: Vec<(f64, f64)> = ct
        .constraint_means
        .iter()
        .copied()
        .zip(ct.constraint_sds.iter().copied())
        .collect();
    log_truncation_prob(u, &cs).exp().clamp(PROB_FLOOR, 1.0)
}

/// Constrained summand of one level. Without constraints this is exactly
/// [`level_log_ratio`].
pub fn constrained_level_log_ratio<T: Scalar>(
    st: &TriadStats<T>,
    y: T,
    at_optimum: bool,
    constraints: &[ConstraintStats<T>],
    y_constraints: &[T],
) -> T {
    if constraints.is_empty() {
        return level_log_ratio(st, y, at_optimum);
    }
    let lp = predictive_log_density(st, y);
    let mut obs = T::from_f64(0.0);
    for (c, yc) in constraints.iter().zip(y_constraints) {
        // Constraint GPs carry no augmented value, so their densities under
        // D_t⁺ and D_t coincide and the difference is exactly zero.
        obs = obs + (c.log_density(*yc) - c.log_density(*yc));
    }
    let Some(m) = triad_moments(st, y) else {
        let (m3, s3) = y_given_optimum(st);
        return log_normal(y, m3, s3) - lp + obs;
    };
    let base = log_normal(y, m.m3, m.s3);
    if at_optimum {
        return base - lp + obs;
    }
    let v = T::from_f64(st.v_star);
    let cond: Vec<(T, T)> = constraints
        .iter()
        .zip(y_constraints)
        .map(|(c, yc)| c.conditioned(*yc))
        .collect();
    let uncond: Vec<(T, T)> = constraints.iter().map(|c| c.unconditioned()).collect();
    let lp1 = log_truncation_prob((v - m.m1) / m.s1, &cond);
    let lp2 = log_truncation_prob((v - m.m2) / m.s2, &uncond);
    lp1 - lp2 + base - lp + obs
}
