//! Exact Gaussian-process regression over joint inputs `(x, θ)`.

mod fit;
mod gaussian;
mod model;

pub use fit::{fit_hyperparameters, log_marginal_likelihood, FitOutcome};
pub use gaussian::{condition, JointGaussian};
pub use model::{GpModel, Whitened, WhitenedGrad};

/// Variance of the synthetic observation used for augmented optima.
pub const AUGMENT_JITTER: f64 = 1e-8;
/// Lower bound on fitted noise variance.
pub const NOISE_FLOOR: f64 = 1e-6;
pub const LENGTHSCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
pub const OUTPUT_SCALE_BOUNDS: (f64, f64) = (1e-6, 1e6);

/// A joint input in the scaled unit hypercube.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPoint {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

impl QueryPoint {
    pub fn new(x: Vec<f64>, theta: Vec<f64>) -> Self {
        QueryPoint { x, theta }
    }

    /// Splits a concatenated `(x, θ)` vector.
    pub fn from_concat(z: &[f64], dim_x: usize) -> Self {
        QueryPoint {
            x: z[..dim_x].to_vec(),
            theta: z[dim_x..].to_vec(),
        }
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.theta.len()
    }

    pub fn concat(&self) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.dim());
        z.extend_from_slice(&self.x);
        z.extend_from_slice(&self.theta);
        z
    }

    pub fn is_in_unit_cube(&self) -> bool {
        self.x
            .iter()
            .chain(&self.theta)
            .all(|v| v.is_finite() && (0.0..=1.0).contains(v))
    }
}

/// Which modeled function an observation or model refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Target {
    Upper,
    Lower,
    UpperConstraint(usize),
    LowerConstraint(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub point: QueryPoint,
    pub y_f: Option<f64>,
    pub y_g: Option<f64>,
    pub y_cu: Option<Vec<f64>>,
    pub y_cl: Option<Vec<f64>>,
}

impl ObservationRecord {
    pub fn value(&self, target: Target) -> Option<f64> {
        match target {
            Target::Upper => self.y_f,
            Target::Lower => self.y_g,
            Target::UpperConstraint(n) => self.y_cu.as_ref().and_then(|v| v.get(n).copied()),
            Target::LowerConstraint(m) => self.y_cl.as_ref().and_then(|v| v.get(m).copied()),
        }
    }
}

/// A sampled optimum appended as a noiseless pseudo-observation.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRecord {
    pub point: QueryPoint,
    pub f: f64,
    pub g: f64,
}

/// Observed records in arrival order, plus any augmented optima.
///
/// Augmented optima live apart from the real records so hyperparameter
/// fitting (which reads `records` only) never sees them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<ObservationRecord>,
    pub n0: usize,
    pub augmented: Vec<AugmentedRecord>,
}

impl Dataset {
    pub fn new(n0: usize) -> Self {
        Dataset {
            records: Vec::new(),
            n0,
            augmented: Vec::new(),
        }
    }

    pub fn push(&mut self, record: ObservationRecord) {
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Inputs, targets and per-point noise variances for one modeled
    /// function. Real records use `noise_variance`; augmented optima (upper
    /// and lower objectives only) use [`AUGMENT_JITTER`].
    pub fn training_set(&self, target: Target, noise_variance: f64) -> TrainingSet {
        let mut set = TrainingSet::default();
        for r in &self.records {
            if let Some(y) = r.value(target) {
                set.inputs.push(r.point.concat());
                set.targets.push(y);
                set.noise.push(noise_variance);
            }
        }
        for a in &self.augmented {
            let y = match target {
                Target::Upper => a.f,
                Target::Lower => a.g,
                _ => continue,
            };
            set.inputs.push(a.point.concat());
            set.targets.push(y);
            set.noise.push(AUGMENT_JITTER);
        }
        set
    }

    /// Real records only, as used for hyperparameter fitting.
    pub fn real_observations(&self, target: Target) -> (Vec<Vec<f64>>, Vec<f64>) {
        self.records
            .iter()
            .filter_map(|r| r.value(target).map(|y| (r.point.concat(), y)))
            .unzip()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub noise: Vec<f64>,
}

/// Returns `D_t^+`: the dataset with a sampled optimum `(x*, θ*, f*, g*)`
/// appended as a noiseless observation of both objectives.
pub fn augment(dataset: &Dataset, point: &QueryPoint, f_star: f64, g_star: f64) -> Dataset {
    let mut out = dataset.clone();
    out.augmented.push(AugmentedRecord {
        point: point.clone(),
        f: f_star,
        g: g_star,
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpHyperparams {
    pub prior_mean: f64,
    pub lengthscale: f64,
    pub output_scale: f64,
    pub noise_variance: f64,
}

impl GpHyperparams {
    pub fn new(prior_mean: f64, lengthscale: f64, output_scale: f64, noise_variance: f64) -> Self {
        GpHyperparams {
            prior_mean,
            lengthscale,
            output_scale,
            noise_variance,
        }
    }

    /// A data-scaled starting point for fitting.
    pub fn initial_for(targets: &[f64]) -> Self {
        let n = targets.len().max(1) as f64;
        let mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n;
        GpHyperparams {
            prior_mean: if targets.is_empty() { 0.0 } else { mean },
            lengthscale: 0.25,
            output_scale: var.clamp(1e-2, OUTPUT_SCALE_BOUNDS.1),
            noise_variance: (1e-4 * var).max(NOISE_FLOOR),
        }
    }

    pub fn is_valid(&self) -> bool {
        self.prior_mean.is_finite()
            && self.lengthscale > 0.0
            && self.output_scale > 0.0
            && self.noise_variance >= 0.0
            && self.lengthscale.is_finite()
            && self.output_scale.is_finite()
            && self.noise_variance.is_finite()
    }

    /// Isotropic Gaussian kernel on concatenated inputs.
    #[inline]
    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        self.output_scale * (-0.5 * sq_dist(a, b) / (self.lengthscale * self.lengthscale)).exp()
    }
}

#[inline]
pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(x: f64, t: f64, f: Option<f64>, g: Option<f64>) -> ObservationRecord {
        ObservationRecord {
            point: QueryPoint::new(vec![x], vec![t]),
            y_f: f,
            y_g: g,
            y_cu: None,
            y_cl: None,
        }
    }

    #[test]
    fn augment_empty_dataset_has_one_record() {
        let d = Dataset::new(0);
        let p = QueryPoint::new(vec![0.2], vec![0.3]);
        let plus = augment(&d, &p, 1.0, 2.0);
        assert_eq!(plus.augmented.len(), 1);
        assert_eq!(plus.training_set(Target::Upper, 1e-3).targets, vec![1.0]);
        assert_eq!(plus.training_set(Target::Lower, 1e-3).noise, vec![AUGMENT_JITTER]);
        // Constraint models are never augmented.
        assert!(plus.training_set(Target::UpperConstraint(0), 1e-3).inputs.is_empty());
        // Real records are untouched.
        assert!(plus.real_observations(Target::Upper).0.is_empty());
    }

    #[test]
    fn decoupled_records_feed_only_their_level() {
        let mut d = Dataset::new(2);
        d.push(rec(0.1, 0.2, Some(1.0), Some(2.0)));
        d.push(rec(0.3, 0.4, None, Some(3.0)));
        assert_eq!(d.training_set(Target::Upper, 0.1).targets, vec![1.0]);
        assert_eq!(d.training_set(Target::Lower, 0.1).targets, vec![2.0, 3.0]);
    }

    #[test]
    fn kernel_at_zero_distance_is_output_scale() {
        let h = GpHyperparams::new(0.0, 0.3, 2.5, 1e-6);
        assert_eq!(h.kernel(&[0.1, 0.2], &[0.1, 0.2]), 2.5);
        assert!(h.kernel(&[0.0, 0.0], &[1.0, 1.0]) < 2.5);
    }
}
