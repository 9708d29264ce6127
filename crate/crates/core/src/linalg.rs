use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const BASE_JITTER: f64 = 1e-8;
pub const MAX_JITTER: f64 = 1e-4;

/// Lower Cholesky factor of `a + jitter·I`, starting from [`BASE_JITTER`]
/// and escalating ×10 up to [`MAX_JITTER`]. Returns the factor and the
/// jitter that succeeded.
pub fn cholesky_jittered(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite entry in matrix to factorize".into()));
    }
    let n = a.nrows();
    let mut jitter = BASE_JITTER;
    loop {
        let mut m = a.clone();
        for i in 0..n {
            m[(i, i)] += jitter;
        }
        if let Some(c) = m.cholesky() {
            return Ok((c.unpack(), jitter));
        }
        jitter *= 10.0;
        if jitter > MAX_JITTER * 1.000_001 {
            return Err(Error::Numeric(format!(
                "cholesky failed with jitter up to {MAX_JITTER:e} (n={n})"
            )));
        }
    }
}

/// Solves `L x = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if l.nrows() == 0 {
        return DVector::zeros(0);
    }
    l.solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

pub fn solve_lower_mat(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if l.nrows() == 0 {
        return DMatrix::zeros(0, b.ncols());
    }
    l.solve_lower_triangular(b)
        .expect("cholesky factor has a positive diagonal")
}

/// Solves `(L Lᵀ) x = b`.
pub fn cho_solve(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    if l.nrows() == 0 {
        return DVector::zeros(0);
    }
    let y = solve_lower(l, b);
    l.tr_solve_lower_triangular(&y)
        .expect("cholesky factor has a positive diagonal")
}

/// Ratio of extreme absolute eigenvalues of a symmetric matrix.
pub fn symmetric_condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = m.clone().symmetric_eigenvalues();
    let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), e| {
        (lo.min(e.abs()), hi.max(e.abs()))
    });
    if lo == 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}
