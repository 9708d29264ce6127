use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A multivariate normal over a small set of coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl JointGaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        JointGaussian { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..i).all(|j| (self.cov[(i, j)] - self.cov[(j, i)]).abs() <= tol))
    }
}

/// Conditions `joint` on coordinate `observed_index` having been observed
/// as `value` with Gaussian noise of variance `obs_noise_variance`.
///
/// The returned Gaussian is over the remaining coordinates, in their
/// original order.
pub fn condition(
    joint: &JointGaussian,
    observed_index: usize,
    value: f64,
    obs_noise_variance: f64,
) -> Result<JointGaussian> {
    let n = joint.dim();
    if observed_index >= n {
        return Err(Error::Usage(format!(
            "observed index {observed_index} out of range for dimension {n}"
        )));
    }
    if obs_noise_variance < 0.0 {
        return Err(Error::Usage("negative observation noise".into()));
    }
    let total = joint.cov[(observed_index, observed_index)] + obs_noise_variance;
    if !(total > 0.0) {
        return Err(Error::DegenerateConditioning {
            index: observed_index,
            variance: total,
        });
    }
    let keep: Vec<usize> = (0..n).filter(|&i| i != observed_index).collect();
    let resid = value - joint.mean[observed_index];
    let mean = DVector::from_iterator(
        keep.len(),
        keep.iter()
            .map(|&i| joint.mean[i] + joint.cov[(i, observed_index)] / total * resid),
    );
    let cov = DMatrix::from_fn(keep.len(), keep.len(), |a, b| {
        let (i, j) = (keep[a], keep[b]);
        joint.cov[(i, j)] - joint.cov[(i, observed_index)] * joint.cov[(observed_index, j)] / total
    });
    Ok(JointGaussian { mean, cov })
}
