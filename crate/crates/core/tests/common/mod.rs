#![allow(dead_code)]

use std::path::PathBuf;

use cascade_lab::ensemble::{calibrate, load_model, BranchingLaw, Ensemble};
use cascade_lab::rng::StreamSeed;
use rand::Rng;

pub fn model_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("models").join(name)
}

pub fn model(name: &str) -> Ensemble {
    load_model(&model_path(name)).unwrap()
}

pub fn calibrated(name: &str) -> Ensemble {
    calibrate(&model(name)).unwrap().0
}

/// Strictly positive atoms, so the condition holds trivially.
pub fn random_ensemble(seed: u64, d: usize) -> Ensemble {
    let mut rng = StreamSeed::new(seed).label("random-ensemble").rng();
    let atoms = rng.random_range(2..=3);
    let mut weights: Vec<f64> = (0..atoms).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let rows: Vec<(f64, Vec<Vec<f64>>)> = weights
        .into_iter()
        .map(|w| {
            let m = (0..d)
                .map(|_| (0..d).map(|_| rng.random_range(0.05..1.5)).collect())
                .collect();
            (w, m)
        })
        .collect();
    Ensemble::from_weighted_rows(&rows, BranchingLaw::Constant(2)).unwrap()
}

/// `W·a₀` with `a₀ = [[1,1],[1,2]]`.
pub fn scalar_family(w: &[(f64, f64)]) -> Ensemble {
    let rows: Vec<(f64, Vec<Vec<f64>>)> = w
        .iter()
        .map(|&(value, p)| (p, vec![vec![value, value], vec![value, 2.0 * value]]))
        .collect();
    Ensemble::from_weighted_rows(&rows, BranchingLaw::Constant(2)).unwrap()
}

/// Golden ratio eigenvalue of `a₀`.
pub fn a0_radius() -> f64 {
    (3.0 + 5f64.sqrt()) / 2.0
}

/// Bisection for `(1/2.4)^χ (0.8·0.5^χ + 0.2·4^χ) = 1/2` on `(1, 3)`.
pub fn oracle_chi() -> f64 {
    let f = |x: f64| (1.0f64 / 2.4).powf(x) * (0.8 * 0.5f64.powf(x) + 0.2 * 4f64.powf(x)) - 0.5;
    let (mut lo, mut hi) = (1.0 + 1e-9, 3.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
