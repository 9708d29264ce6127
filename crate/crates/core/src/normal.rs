//! Standard normal density and distribution functions in log space.

use libm::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, LN_2};

/// `0.5 * ln(2π)`
pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Below this argument `log_cdf` switches to the asymptotic tail series.
pub const LOG_CDF_ASYMPTOTIC_BELOW: f64 = -8.0;

#[inline]
pub fn log_pdf(z: f64) -> f64 {
    -0.5 * z * z - LN_SQRT_2PI
}

#[inline]
pub fn pdf(z: f64) -> f64 {
    log_pdf(z).exp()
}

#[inline]
pub fn cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `ln Φ(z)`, finite for every finite `z`.
pub fn log_cdf(z: f64) -> f64 {
    if z < LOG_CDF_ASYMPTOTIC_BELOW {
        log_pdf(z) - (-z).ln() + tail_series(z).ln()
    } else if z > 0.0 {
        (-0.5 * erfc(z * FRAC_1_SQRT_2)).ln_1p()
    } else {
        (0.5 * erfc(-z * FRAC_1_SQRT_2)).ln()
    }
}

/// Asymptotic series of the Mills ratio, `Φ(z) z / φ(z)` for `z → -∞`:
/// `1 - 1/z² + 3/z⁴ - 15/z⁶ + …`, truncated at its smallest term.
fn tail_series(z: f64) -> f64 {
    let inv_z2 = 1.0 / (z * z);
    let mut sum = 1.0;
    let mut term = 1.0;
    for k in 1..64 {
        let next = -term * (2 * k - 1) as f64 * inv_z2;
        if next.abs() >= term.abs() || next.abs() < 1e-17 {
            break;
        }
        term = next;
        sum += term;
    }
    sum
}

/// `d/dz ln Φ(z) = φ(z) / Φ(z)`
pub fn log_cdf_derivative(z: f64) -> f64 {
    (log_pdf(z) - log_cdf(z)).exp()
}

/// `ln N(y; mean, variance)`
#[inline]
pub fn log_density(y: f64, mean: f64, variance: f64) -> f64 {
    let sd = variance.sqrt();
    log_pdf((y - mean) / sd) - sd.ln()
}

/// `ln(1 - e^x)` for `x ≤ 0`.
pub fn ln_1m_exp(x: f64) -> f64 {
    if x > -LN_2 {
        (-x.exp_m1()).ln()
    } else {
        (-x.exp()).ln_1p()
    }
}
