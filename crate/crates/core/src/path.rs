//! Random-Fourier-feature sample paths of a GP posterior.
//!
//! A path is `m + Σ_j w_j a cos(ω_j·z + b_j)` with `a = sqrt(2σ²/D)`. Its
//! weights are drawn from the Bayesian linear model posterior given the
//! model's training data, so the path is a cheap, differentiable,
//! approximate posterior draw.

use std::f64::consts::TAU;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::{Error, Result};
use crate::gp::{GpHyperparams, GpModel};
use crate::linalg::{cho_solve, cholesky_jittered};

/// Frequencies `Ω` (`D × d`), phases `b` and amplitude of one feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    frequencies: DMatrix<f64>,
    phases: DVector<f64>,
    amplitude: f64,
}

impl FeatureMap {
    pub fn new(frequencies: DMatrix<f64>, phases: DVector<f64>, output_scale: f64) -> Self {
        let d = frequencies.nrows();
        assert!(d >= 1 && phases.len() == d && output_scale > 0.0);
        FeatureMap {
            frequencies,
            phases,
            amplitude: (2.0 * output_scale / d as f64).sqrt(),
        }
    }

    /// Number of features `D`.
    pub fn len(&self) -> usize {
        self.phases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phases.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.frequencies.ncols()
    }

    pub fn frequencies(&self) -> &DMatrix<f64> {
        &self.frequencies
    }

    pub fn phases(&self) -> &DVector<f64> {
        &self.phases
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }

    fn arguments(&self, z: &[f64]) -> DVector<f64> {
        let mut arg = self.phases.clone();
        for (c, zc) in z.iter().enumerate() {
            arg.axpy(*zc, &self.frequencies.column(c), 1.0);
        }
        arg
    }

    /// `φ(z)`, length `D`.
    pub fn features(&self, z: &[f64]) -> DVector<f64> {
        self.arguments(z).map(|a| self.amplitude * a.cos())
    }

    /// Feature matrix with one row per input.
    pub fn feature_matrix(&self, zs: &[Vec<f64>]) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(zs.len(), self.len());
        for (i, z) in zs.iter().enumerate() {
            m.row_mut(i).copy_from(&self.features(z).transpose());
        }
        m
    }
}

/// Draws `D` frequencies from the spectral density of the Gaussian kernel
/// with `hyper`'s lengthscale, and uniform phases.
pub fn draw_feature_map<R: Rng + ?Sized>(
    hyper: &GpHyperparams,
    features: usize,
    input_dim: usize,
    rng: &mut R,
) -> FeatureMap {
    assert!(features >= 1, "at least one feature");
    let spectral = Normal::new(0.0, 1.0 / hyper.lengthscale).expect("positive lengthscale");
    let mut frequencies = DMatrix::zeros(features, input_dim);
    for j in 0..features {
        for c in 0..input_dim {
            frequencies[(j, c)] = spectral.sample(rng);
        }
    }
    let phases = DVector::from_iterator(features, (0..features).map(|_| rng.random::<f64>() * TAU));
    FeatureMap::new(frequencies, phases, hyper.output_scale)
}

/// One posterior draw: a feature map and its weight vector.
#[derive(Debug, Clone)]
pub struct PathSample {
    map: Arc<FeatureMap>,
    weights: DVector<f64>,
    prior_mean: f64,
    dim_x: usize,
}

impl PathSample {
    pub fn new(map: Arc<FeatureMap>, weights: DVector<f64>, prior_mean: f64, dim_x: usize) -> Self {
        assert_eq!(weights.len(), map.len());
        assert!(dim_x <= map.input_dim());
        PathSample {
            map,
            weights,
            prior_mean,
            dim_x,
        }
    }

    pub fn map(&self) -> &Arc<FeatureMap> {
        &self.map
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn prior_mean(&self) -> f64 {
        self.prior_mean
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.prior_mean + self.map.features(z).dot(&self.weights)
    }

    /// Gradient with respect to the full input `z`.
    pub fn grad(&self, z: &[f64]) -> DVector<f64> {
        let a = self.map.amplitude;
        let s = self
            .map
            .arguments(z)
            .zip_map(&self.weights, |arg, w| -a * w * arg.sin());
        self.map.frequencies.tr_mul(&s)
    }

    /// Full Hessian `Ωᵀ diag(-a w cos) Ω`.
    pub fn hessian(&self, z: &[f64]) -> DMatrix<f64> {
        let a = self.map.amplitude;
        let c = self
            .map
            .arguments(z)
            .zip_map(&self.weights, |arg, w| -a * w * arg.cos());
        let om = &self.map.frequencies;
        let mut scaled = om.clone();
        for (j, cj) in c.iter().enumerate() {
            scaled.row_mut(j).scale_mut(*cj);
        }
        om.tr_mul(&scaled)
    }
}

/// A twice-differentiable function of `(x, θ)`: either a sampled path or,
/// in tests, a closed-form function.
pub trait Surface: Sync {
    fn dim_x(&self) -> usize;
    fn dim_theta(&self) -> usize;
    fn value(&self, x: &[f64], theta: &[f64]) -> f64;
    /// Gradient over `(x, θ)`, x-block first.
    fn grad(&self, x: &[f64], theta: &[f64]) -> DVector<f64>;
    /// `∂²/∂θ∂θᵀ`
    fn hess_theta(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64>;
    /// `∂²/∂θ∂xᵀ`, `d_Θ × d_X`.
    fn cross_hess(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64>;

    /// Values on the product grid, `xs.len() × thetas.len()`.
    fn table(&self, xs: &[Vec<f64>], thetas: &[Vec<f64>]) -> DMatrix<f64> {
        DMatrix::from_fn(xs.len(), thetas.len(), |i, j| self.value(&xs[i], &thetas[j]))
    }
}

fn concat(x: &[f64], theta: &[f64]) -> Vec<f64> {
    let mut z = Vec::with_capacity(x.len() + theta.len());
    z.extend_from_slice(x);
    z.extend_from_slice(theta);
    z
}

impl Surface for PathSample {
    fn dim_x(&self) -> usize {
        self.dim_x
    }

    fn dim_theta(&self) -> usize {
        self.map.input_dim() - self.dim_x
    }

    fn value(&self, x: &[f64], theta: &[f64]) -> f64 {
        self.eval(&concat(x, theta))
    }

    fn grad(&self, x: &[f64], theta: &[f64]) -> DVector<f64> {
        PathSample::grad(self, &concat(x, theta))
    }

    fn hess_theta(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let dx = self.dim_x;
        let dt = self.dim_theta();
        self.hessian(&concat(x, theta)).view((dx, dx), (dt, dt)).into_owned()
    }

    fn cross_hess(&self, x: &[f64], theta: &[f64]) -> DMatrix<f64> {
        let dx = self.dim_x;
        let dt = self.dim_theta();
        self.hessian(&concat(x, theta)).view((dx, 0), (dt, dx)).into_owned()
    }

    /// `cos(α + γ) = cos α cos γ − sin α sin γ` splits the argument into an
    /// x part (with the phase) and a θ part, so the grid costs two products.
    fn table(&self, xs: &[Vec<f64>], thetas: &[Vec<f64>]) -> DMatrix<f64> {
        let d = self.map.len();
        let dx = self.dim_x;
        let om = &self.map.frequencies;
        let scale = self.weights.map(|w| w * self.map.amplitude);
        let mut ca = DMatrix::zeros(xs.len(), d);
        let mut sa = DMatrix::zeros(xs.len(), d);
        for (i, x) in xs.iter().enumerate() {
            for k in 0..d {
                let mut arg = self.map.phases[k];
                for (c, xc) in x.iter().enumerate() {
                    arg += om[(k, c)] * xc;
                }
                let (s, c) = arg.sin_cos();
                ca[(i, k)] = c * scale[k];
                sa[(i, k)] = s * scale[k];
            }
        }
        let mut cc = DMatrix::zeros(thetas.len(), d);
        let mut sc = DMatrix::zeros(thetas.len(), d);
        for (j, th) in thetas.iter().enumerate() {
            for k in 0..d {
                let mut arg = 0.0;
                for (c, tc) in th.iter().enumerate() {
                    arg += om[(k, dx + c)] * tc;
                }
                let (s, c) = arg.sin_cos();
                cc[(j, k)] = c;
                sc[(j, k)] = s;
            }
        }
        let mut out = DMatrix::from_element(xs.len(), thetas.len(), self.prior_mean);
        out.gemm(1.0, &ca, &cc.transpose(), 1.0);
        out.gemm(-1.0, &sa, &sc.transpose(), 1.0);
        out
    }
}

/// Draws path weights from the posterior of the Bayesian linear model
/// `y = m + Φw + ε`, `w ~ N(0, I)`, `ε ~ N(0, diag(noise))`, given the
/// model's training data.
///
/// With fewer observations than features the draw uses the dual form
/// `w = w₀ + Φᵀ(ΦΦᵀ + Σ)⁻¹(y − m − Φw₀ − ε)`; otherwise the `D × D` normal
/// equations are factorized.
pub fn draw_path<R: Rng + ?Sized>(
    model: &GpModel,
    map: Arc<FeatureMap>,
    dim_x: usize,
    rng: &mut R,
) -> Result<PathSample> {
    let d = map.len();
    let n = model.n();
    let m = model.hyper().prior_mean;
    let noise: Vec<f64> = model
        .noise()
        .iter()
        .map(|s| s + model.jitter())
        .collect();
    let std_normal = |rng: &mut R| rng.sample::<f64, _>(StandardNormal);
    let weights = if n == 0 {
        DVector::from_iterator(d, (0..d).map(|_| std_normal(rng)))
    } else {
        let phi = map.feature_matrix(model.inputs());
        let r = model.targets().add_scalar(-m);
        if n < d {
            let w0 = DVector::from_iterator(d, (0..d).map(|_| std_normal(rng)));
            let eps = DVector::from_iterator(n, noise.iter().map(|s| s.sqrt() * std_normal(rng)));
            let mut gram = &phi * phi.transpose();
            for (i, s) in noise.iter().enumerate() {
                gram[(i, i)] += s;
            }
            let (l, _) = cholesky_jittered(&gram)?;
            let resid = r - &phi * &w0 - eps;
            w0 + phi.tr_mul(&cho_solve(&l, &resid))
        } else {
            let mut scaled = phi.clone();
            for (i, s) in noise.iter().enumerate() {
                scaled.row_mut(i).scale_mut(1.0 / s);
            }
            let mut a = phi.tr_mul(&scaled);
            for j in 0..d {
                a[(j, j)] += 1.0;
            }
            let (l, _) = cholesky_jittered(&a)?;
            let mean = cho_solve(&l, &scaled.tr_mul(&r));
            let xi = DVector::from_iterator(d, (0..d).map(|_| std_normal(rng)));
            let dev = l
                .tr_solve_lower_triangular(&xi)
                .ok_or_else(|| Error::Numeric("singular weight posterior".into()))?;
            mean + dev
        }
    };
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::Numeric("non-finite path weights".into()));
    }
    Ok(PathSample::new(map, weights, m, dim_x))
}

/// Weight posterior mean only (no sampling); used to cross-check draws.
pub fn posterior_weight_mean(model: &GpModel, map: &FeatureMap) -> Result<DVector<f64>> {
    let phi = map.feature_matrix(model.inputs());
    let r = model.targets().add_scalar(-model.hyper().prior_mean);
    let mut gram = &phi * phi.transpose();
    for (i, s) in model.noise().iter().enumerate() {
        gram[(i, i)] += s + model.jitter();
    }
    let (l, _) = cholesky_jittered(&gram)?;
    Ok(phi.tr_mul(&cho_solve(&l, &r)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{GpHyperparams, GpModel, QueryPoint};
    use crate::rng::stream;

    fn hyper(ell: f64) -> GpHyperparams {
        GpHyperparams::new(0.0, ell, 1.0, 1e-6)
    }

    fn random_point<R: Rng>(rng: &mut R, d: usize) -> Vec<f64> {
        (0..d).map(|_| rng.random()).collect()
    }

    #[test]
    fn feature_inner_product_estimates_output_scale() {
        let h = GpHyperparams::new(0.0, 0.3, 1.7, 1e-6);
        let z = [0.2, 0.9];
        let mean: f64 = (0..50)
            .map(|s| {
                let map = draw_feature_map(&h, 2000, 2, &mut stream(s, &[1]));
                map.features(&z).norm_squared()
            })
            .sum::<f64>()
            / 50.0;
        assert!((mean - 1.7).abs() < 0.02, "{mean}");
    }

    #[test]
    fn long_lengthscale_gives_flat_kernel() {
        let h = hyper(1e3);
        let map = draw_feature_map(&h, 2000, 2, &mut stream(3, &[]));
        let mut rng = stream(4, &[]);
        for _ in 0..20 {
            let a = random_point(&mut rng, 2);
            let b = random_point(&mut rng, 2);
            assert!((map.features(&a).dot(&map.features(&b)) - 1.0).abs() < 0.02);
        }
    }

    #[test]
    fn kernel_approximation_error_is_small() {
        let mut rng = stream(5, &[]);
        for &ell in &[0.1, 0.3, 1.0] {
            let h = hyper(ell);
            let map = draw_feature_map(&h, 2000, 2, &mut stream(6, &[]));
            let worst = (0..100)
                .map(|_| {
                    let a = random_point(&mut rng, 2);
                    let b = random_point(&mut rng, 2);
                    (map.features(&a).dot(&map.features(&b)) - h.kernel(&a, &b)).abs()
                })
                .fold(0.0, f64::max);
            // Single-map error has sd about sqrt(1/D) ≈ 0.022 per pair.
            assert!(worst < 0.09, "ell={ell}: {worst}");
        }
    }

    #[test]
    fn same_stream_same_map_and_weights() {
        let h = hyper(0.25);
        let a = draw_feature_map(&h, 64, 2, &mut stream(9, &[2]));
        let b = draw_feature_map(&h, 64, 2, &mut stream(9, &[2]));
        assert_eq!(a, b);
        let pts = vec![QueryPoint::new(vec![0.1], vec![0.4])];
        let model = GpModel::new(h, &pts, &[0.3]).unwrap();
        let map = Arc::new(a);
        let p = draw_path(&model, map.clone(), 1, &mut stream(1, &[])).unwrap();
        let q = draw_path(&model, map, 1, &mut stream(1, &[])).unwrap();
        assert_eq!(p.weights(), q.weights());
    }

    #[test]
    fn prior_paths_have_prior_moments() {
        let h = GpHyperparams::new(0.7, 0.3, 2.0, 1e-6);
        let model = GpModel::prior(h);
        let z = [0.3, 0.6];
        let vals: Vec<f64> = (0..2000)
            .map(|s| {
                let mut rng = stream(s, &[7]);
                let map = Arc::new(draw_feature_map(&h, 500, 2, &mut rng));
                draw_path(&model, map, 1, &mut rng).unwrap().eval(&z)
            })
            .collect();
        let mean = vals.iter().sum::<f64>() / 2000.0;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1999.0;
        assert!((mean - 0.7).abs() < 0.1 * 0.7, "{mean}");
        assert!((var - 2.0).abs() < 0.2, "{var}");
    }

    #[test]
    fn near_noiseless_record_is_interpolated() {
        let h = GpHyperparams::new(0.0, 0.3, 1.0, 1e-10);
        let p = QueryPoint::new(vec![0.4], vec![0.55]);
        let model = GpModel::new(h, std::slice::from_ref(&p), &[1.3]).unwrap();
        for s in 0..20 {
            let mut rng = stream(s, &[8]);
            let map = Arc::new(draw_feature_map(&h, 2000, 2, &mut rng));
            let path = draw_path(&model, map, 1, &mut rng).unwrap();
            assert!((path.eval(&p.concat()) - 1.3).abs() < 0.05);
        }
    }

    #[test]
    fn primal_and_dual_forms_agree_in_mean() {
        let h = GpHyperparams::new(0.1, 0.4, 1.0, 1e-2);
        let mut rng = stream(11, &[]);
        let pts: Vec<QueryPoint> = (0..30)
            .map(|_| QueryPoint::new(vec![rng.random()], vec![rng.random()]))
            .collect();
        let y: Vec<f64> = pts.iter().map(|p| (4.0 * p.x[0]).sin() + p.theta[0]).collect();
        let model = GpModel::new(h, &pts, &y).unwrap();
        // 20 features: primal branch (D ≤ n). Averaging many weight draws for
        // one map recovers the closed-form posterior mean.
        let map = Arc::new(draw_feature_map(&h, 20, 2, &mut rng));
        let want = posterior_weight_mean(&model, &map).unwrap();
        let mut avg = DVector::zeros(20);
        for s in 0..4000 {
            avg += draw_path(&model, map.clone(), 1, &mut stream(s, &[12])).unwrap().weights();
        }
        avg /= 4000.0;
        let err = (&avg - &want).amax();
        assert!(err < 0.1, "{err}");
        // 60 features: dual branch.
        let map = Arc::new(draw_feature_map(&h, 60, 2, &mut rng));
        let want = posterior_weight_mean(&model, &map).unwrap();
        let mut avg = DVector::zeros(60);
        for s in 0..4000 {
            avg += draw_path(&model, map.clone(), 1, &mut stream(s, &[13])).unwrap().weights();
        }
        avg /= 4000.0;
        let err = (&avg - &want).amax();
        assert!(err < 0.1, "{err}");
    }

    #[test]
    fn zero_frequencies_have_zero_gradient() {
        let map = Arc::new(FeatureMap::new(
            DMatrix::zeros(8, 3),
            DVector::from_element(8, 0.3),
            1.0,
        ));
        let path = PathSample::new(map, DVector::from_element(8, 0.5), 0.0, 1);
        assert_eq!(PathSample::grad(&path, &[0.1, 0.7, 0.2]), DVector::zeros(3));
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = hyper(0.3);
        for s in 0..10 {
            let mut rng = stream(s, &[14]);
            let map = Arc::new(draw_feature_map(&h, 300, 4, &mut rng));
            let path = draw_path(&GpModel::prior(h), map, 2, &mut rng).unwrap();
            let z = random_point(&mut rng, 4);
            let g = PathSample::grad(&path, &z);
            let hs = path.hessian(&z);
            let eps = 1e-5;
            for c in 0..4 {
                let mut a = z.clone();
                let mut b = z.clone();
                a[c] += eps;
                b[c] -= eps;
                let fd = (path.eval(&a) - path.eval(&b)) / (2.0 * eps);
                assert!((fd - g[c]).abs() < 1e-5, "{fd} vs {}", g[c]);
                let fdg = (PathSample::grad(&path, &a) - PathSample::grad(&path, &b)) / (2.0 * eps);
                for r in 0..4 {
                    assert!((fdg[r] - hs[(r, c)]).abs() < 1e-3);
                }
            }
            let ht = path.hess_theta(&z[..2], &z[2..]);
            assert!((&ht - ht.transpose()).amax() < 1e-12);
            assert_eq!(path.cross_hess(&z[..2], &z[2..])[(1, 0)], hs[(3, 0)]);
        }
    }

    #[test]
    fn table_matches_pointwise_evaluation() {
        let h = hyper(0.2);
        let mut rng = stream(15, &[]);
        let map = Arc::new(draw_feature_map(&h, 200, 3, &mut rng));
        let path = draw_path(&GpModel::prior(h), map, 1, &mut rng).unwrap();
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 / 6.0]).collect();
        let ts: Vec<Vec<f64>> = (0..5).map(|j| vec![j as f64 / 4.0, 1.0 - j as f64 / 4.0]).collect();
        let t = path.table(&xs, &ts);
        for i in 0..7 {
            for j in 0..5 {
                assert!((t[(i, j)] - path.value(&xs[i], &ts[j])).abs() < 1e-10);
            }
        }
    }
}
