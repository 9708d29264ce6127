use nalgebra::{DMatrix, DVector};

use super::{GpHyperparams, JointGaussian, QueryPoint, TrainingSet};
use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, cho_solve, solve_lower, solve_lower_mat};

/// A Gaussian process conditioned on a training set.
///
/// Immutable once built: the Cholesky factor of `K + diag(noise) + jitter·I`
/// and `α = (K + …)⁻¹ (y − m)` are computed up front.
#[derive(Debug, Clone)]
pub struct GpModel {
    hyper: GpHyperparams,
    inputs: Vec<Vec<f64>>,
    targets: DVector<f64>,
    noise: Vec<f64>,
    chol: DMatrix<f64>,
    alpha: DVector<f64>,
    jitter: f64,
}

/// Posterior quantities of one input, sufficient for posterior covariances
/// against other whitened inputs: `v = L⁻¹ k(z)`.
#[derive(Debug, Clone)]
pub struct Whitened {
    pub z: Vec<f64>,
    pub mean: f64,
    pub var: f64,
    pub v: DVector<f64>,
}

/// [`Whitened`] plus derivatives with respect to the input coordinates.
#[derive(Debug, Clone)]
pub struct WhitenedGrad {
    pub w: Whitened,
    pub dmean: DVector<f64>,
    pub dvar: DVector<f64>,
    /// `∂v/∂z`, `n × d`.
    pub dv: DMatrix<f64>,
}

impl GpModel {
    /// Prior-only model.
    pub fn prior(hyper: GpHyperparams) -> Self {
        Self::with_noise(hyper, Vec::new(), Vec::new(), Vec::new()).expect("empty model")
    }

    /// Model over `points` with homoscedastic noise `hyper.noise_variance`.
    pub fn new(hyper: GpHyperparams, points: &[QueryPoint], targets: &[f64]) -> Result<Self> {
        let inputs: Vec<Vec<f64>> = points.iter().map(QueryPoint::concat).collect();
        let noise = vec![hyper.noise_variance; inputs.len()];
        Self::with_noise(hyper, inputs, targets.to_vec(), noise)
    }

    pub fn from_training_set(hyper: GpHyperparams, set: TrainingSet) -> Result<Self> {
        Self::with_noise(hyper, set.inputs, set.targets, set.noise)
    }

    /// Model with a per-point noise variance.
    pub fn with_noise(
        hyper: GpHyperparams,
        inputs: Vec<Vec<f64>>,
        targets: Vec<f64>,
        noise: Vec<f64>,
    ) -> Result<Self> {
        if !hyper.is_valid() {
            return Err(Error::Usage(format!("invalid hyperparameters {hyper:?}")));
        }
        let n = inputs.len();
        if targets.len() != n || noise.len() != n {
            return Err(Error::Usage("inputs, targets and noise lengths differ".into()));
        }
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let v = hyper.kernel(&inputs[i], &inputs[j]);
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
            k[(i, i)] += noise[i];
        }
        let (chol, jitter) = cholesky_jittered(&k)?;
        let targets = DVector::from_vec(targets);
        let centered = targets.add_scalar(-hyper.prior_mean);
        let alpha = cho_solve(&chol, &centered);
        if alpha.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numeric("non-finite GP weights".into()));
        }
        Ok(GpModel {
            hyper,
            inputs,
            targets,
            noise,
            chol,
            alpha,
            jitter,
        })
    }

    pub fn hyper(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<f64> {
        &self.targets
    }

    pub fn noise(&self) -> &[f64] {
        &self.noise
    }

    pub fn n(&self) -> usize {
        self.inputs.len()
    }

    /// Diagonal jitter that made the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Lower Cholesky factor of `K + diag(noise) + jitter·I`.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    fn kernel_column(&self, z: &[f64]) -> Result<DVector<f64>> {
        let k = DVector::from_iterator(
            self.n(),
            self.inputs.iter().map(|xi| self.hyper.kernel(z, xi)),
        );
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite kernel evaluation".into()));
        }
        Ok(k)
    }

    pub fn whiten(&self, z: &[f64]) -> Result<Whitened> {
        let k = self.kernel_column(z)?;
        let v = solve_lower(&self.chol, &k);
        let mean = self.hyper.prior_mean + k.dot(&self.alpha);
        let var = (self.hyper.output_scale - v.norm_squared()).max(0.0);
        Ok(Whitened {
            z: z.to_vec(),
            mean,
            var,
            v,
        })
    }

    /// Whitens many inputs with a single triangular solve.
    pub fn whiten_many(&self, zs: &[Vec<f64>]) -> Result<Vec<Whitened>> {
        let n = self.n();
        let mut k = DMatrix::zeros(n, zs.len());
        for (c, z) in zs.iter().enumerate() {
            for (r, xi) in self.inputs.iter().enumerate() {
                k[(r, c)] = self.hyper.kernel(z, xi);
            }
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite kernel evaluation".into()));
        }
        let v = solve_lower_mat(&self.chol, &k);
        let means = k.tr_mul(&self.alpha);
        Ok(zs
            .iter()
            .enumerate()
            .map(|(c, z)| {
                let vc = v.column(c).into_owned();
                Whitened {
                    z: z.clone(),
                    mean: self.hyper.prior_mean + means[c],
                    var: (self.hyper.output_scale - vc.norm_squared()).max(0.0),
                    v: vc,
                }
            })
            .collect())
    }

    pub fn whiten_with_grad(&self, z: &[f64]) -> Result<WhitenedGrad> {
        let w = self.whiten(z)?;
        let d = z.len();
        let inv_l2 = 1.0 / (self.hyper.lengthscale * self.hyper.lengthscale);
        // ∂k(z, x_i)/∂z = -k(z, x_i) (z - x_i) / ℓ²
        let mut dk = DMatrix::zeros(self.n(), d);
        for (i, xi) in self.inputs.iter().enumerate() {
            let kv = self.hyper.kernel(z, xi);
            for j in 0..d {
                dk[(i, j)] = -kv * (z[j] - xi[j]) * inv_l2;
            }
        }
        let dv = solve_lower_mat(&self.chol, &dk);
        let dmean = dk.tr_mul(&self.alpha);
        let dvar = if w.var > 0.0 {
            dv.tr_mul(&w.v) * -2.0
        } else {
            DVector::zeros(d)
        };
        Ok(WhitenedGrad { w, dmean, dvar, dv })
    }

    /// Posterior covariance between two whitened inputs.
    #[inline]
    pub fn covariance(&self, a: &Whitened, b: &Whitened) -> f64 {
        self.hyper.kernel(&a.z, &b.z) - a.v.dot(&b.v)
    }

    /// Gradient of `Cov(a, b)` with respect to the coordinates of `a`.
    pub fn covariance_grad(&self, a: &WhitenedGrad, b: &Whitened) -> DVector<f64> {
        let inv_l2 = 1.0 / (self.hyper.lengthscale * self.hyper.lengthscale);
        let kab = self.hyper.kernel(&a.w.z, &b.z);
        let dk = DVector::from_iterator(
            a.w.z.len(),
            a.w.z.iter().zip(&b.z).map(|(p, q)| -kab * (p - q) * inv_l2),
        );
        dk - a.dv.tr_mul(&b.v)
    }

    /// Posterior mean and variance at one point; variance clamped at zero.
    pub fn posterior_at(&self, point: &QueryPoint) -> Result<(f64, f64)> {
        let w = self.whiten(&point.concat())?;
        Ok((w.mean, w.var))
    }

    /// Joint posterior over a finite set of points.
    pub fn joint_posterior(&self, points: &[QueryPoint]) -> Result<JointGaussian> {
        if points.is_empty() {
            return Err(Error::Usage("joint_posterior needs at least one point".into()));
        }
        let zs: Vec<Vec<f64>> = points.iter().map(QueryPoint::concat).collect();
        self.joint_posterior_concat(&zs)
    }

    pub fn joint_posterior_concat(&self, zs: &[Vec<f64>]) -> Result<JointGaussian> {
        let ws = self.whiten_many(zs)?;
        let m = ws.len();
        let mean = DVector::from_iterator(m, ws.iter().map(|w| w.mean));
        let mut cov = DMatrix::zeros(m, m);
        for i in 0..m {
            cov[(i, i)] = ws[i].var;
            for j in 0..i {
                let c = self.covariance(&ws[i], &ws[j]);
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        Ok(JointGaussian { mean, cov })
    }
}
