//! Fixtures shared by the criterion benchmarks.

use bljes_core::acquisition::Models;
use bljes_core::benchmarks::{make_problem, BenchmarkSpec};
use bljes_core::gp::{GpHyperparams, GpModel, QueryPoint};
use bljes_core::rng::stream;
use rand::Rng;

/// `n` random observations of the BG problem's two levels.
pub fn observations(n: usize, seed: u64) -> (BenchmarkSpec, Vec<QueryPoint>, Vec<f64>, Vec<f64>) {
    let spec = make_problem("bg", &Default::default(), seed).expect("catalog problem");
    let mut rng = stream(seed, &[42]);
    let pts: Vec<QueryPoint> = (0..n)
        .map(|_| QueryPoint::new(vec![rng.random()], vec![rng.random()]))
        .collect();
    let (f, g) = pts
        .iter()
        .map(|p| {
            let v = spec.evaluate(p);
            (v.f, v.g)
        })
        .unzip();
    (spec, pts, f, g)
}

/// Models over `n` BG observations with fixed hyperparameters.
pub fn models(n: usize, seed: u64) -> Models {
    let (_, pts, f, g) = observations(n, seed);
    let model = |y: &[f64]| {
        let h = GpHyperparams::new(y.iter().sum::<f64>() / y.len() as f64, 0.2, 1.0, 1e-6);
        GpModel::new(h, &pts, y).expect("well-conditioned fixture")
    };
    Models {
        f: model(&f),
        g: model(&g),
        cu: Vec::new(),
        cl: Vec::new(),
    }
}
