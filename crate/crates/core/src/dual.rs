//! Forward-mode dual numbers and the scalar abstraction shared by the
//! pool scorer (`f64`) and the continuous scorer (`Dual`).

use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::normal;

/// Maximum number of input coordinates a dual number tracks.
pub const DUAL_DIM: usize = 8;

/// `v + Σ dᵢ εᵢ`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub v: f64,
    pub d: [f64; DUAL_DIM],
}

impl Dual {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; DUAL_DIM] }
    }

    /// Seed for input coordinate `i`.
    pub fn variable(v: f64, i: usize) -> Self {
        let mut d = [0.0; DUAL_DIM];
        d[i] = 1.0;
        Dual { v, d }
    }

    pub fn with_grad(v: f64, grad: &[f64]) -> Self {
        let mut d = [0.0; DUAL_DIM];
        d[..grad.len()].copy_from_slice(grad);
        Dual { v, d }
    }

    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x *= dv;
        }
        Dual { v, d }
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a += b;
        }
        Dual { v: self.v + o.v, d }
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        let mut d = self.d;
        for (a, b) in d.iter_mut().zip(o.d) {
            *a -= b;
        }
        Dual { v: self.v - o.v, d }
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        let mut d = [0.0; DUAL_DIM];
        for i in 0..DUAL_DIM {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let inv = 1.0 / o.v;
        let q = self.v * inv;
        let mut d = [0.0; DUAL_DIM];
        for i in 0..DUAL_DIM {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Dual { v: q, d }
    }
}

impl Neg for Dual {
    type Output = Dual;
    fn neg(self) -> Dual {
        self.chain(-self.v, -1.0)
    }
}

/// Arithmetic plus the few transcendental functions the acquisition needs.
pub trait Scalar:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(v: f64) -> Self;
    fn value(self) -> f64;
    fn sqrt(self) -> Self;
    fn ln(self) -> Self;
    fn exp(self) -> Self;
    fn log_cdf(self) -> Self;
    /// `max(self, floor)`; below the floor the derivative is zero.
    fn floor_at(self, floor: f64) -> Self;
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn value(self) -> f64 {
        self
    }
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    fn ln(self) -> Self {
        f64::ln(self)
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn log_cdf(self) -> Self {
        normal::log_cdf(self)
    }
    fn floor_at(self, floor: f64) -> Self {
        self.max(floor)
    }
}

impl Scalar for Dual {
    fn from_f64(v: f64) -> Self {
        Dual::constant(v)
    }
    fn value(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let r = self.v.sqrt();
        self.chain(r, 0.5 / r)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn log_cdf(self) -> Self {
        self.chain(normal::log_cdf(self.v), normal::log_cdf_derivative(self.v))
    }
    fn floor_at(self, floor: f64) -> Self {
        if self.v < floor {
            Dual::constant(floor)
        } else {
            self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f<T: Scalar>(x: T, y: T) -> T {
        (x * y + T::from_f64(2.0)).ln() - (x / y).sqrt() + (-x).exp() + (x - y).log_cdf()
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let (x, y) = (0.7, 1.3);
        let out = f(Dual::variable(x, 0), Dual::variable(y, 1));
        assert!((out.v - f(x, y)).abs() < 1e-15);
        let h = 1e-6;
        let fx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let fy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        assert!((out.d[0] - fx).abs() < 1e-8);
        assert!((out.d[1] - fy).abs() < 1e-8);
        assert!(out.d[2..].iter().all(|d| *d == 0.0));
    }

    #[test]
    fn floor_cuts_the_derivative() {
        let a = Dual::variable(1e-12, 0).floor_at(1e-9);
        assert_eq!(a, Dual::constant(1e-9));
        let b = Dual::variable(0.5, 0).floor_at(1e-9);
        assert_eq!(b.d[0], 1.0);
    }
}
