//! Monte Carlo estimate of `κ(s) ≈ E[|Aₙ⋯A₁|^s]^{1/n}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::StreamSeed;

/// Upper bound on `n · reps` matrix products per call.
pub const MC_WORK_CAP: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, Serialize)]
pub struct KappaEstimate {
    pub s: f64,
    pub n: usize,
    pub reps: usize,
    pub estimate: f64,
    /// Jackknife standard error of `estimate`.
    pub stderr: f64,
}

/// `log|Aₙ⋯A₁|` for one replica; the running product is rescaled by its
/// largest entry after every step.
fn log_norm_of_product(ensemble: &Ensemble, n: usize, seed: StreamSeed) -> f64 {
    let mut rng = seed.rng();
    let d = ensemble.dim();
    let mut p = Matrix::identity(d);
    let mut log_scale = 0.0;
    for _ in 0..n {
        p = ensemble.sample(&mut rng).mul(&p);
        let m = p.max_abs();
        p = p.scale(1.0 / m);
        log_scale += m.ln();
    }
    log_scale + p.operator_norm().ln()
}

fn log_mean_exp(values: impl Iterator<Item = f64> + Clone, shift: f64, count: f64) -> f64 {
    shift + (values.map(|v| (v - shift).exp()).sum::<f64>() / count).ln()
}

pub fn kappa_mc(ensemble: &Ensemble, s: f64, n: usize, reps: usize, seed: StreamSeed) -> Result<KappaEstimate> {
    if n == 0 || reps < 2 {
        return Err(Error::TooFewSamples { need: 2, got: reps.min(n) });
    }
    let work = n as u64 * reps as u64;
    if work > MC_WORK_CAP {
        return Err(Error::WorkCapExceeded(format!(
            "kappa_mc needs {work} products, cap is {MC_WORK_CAP}"
        )));
    }
    let seed = seed.label("kappa_mc");
    let logs: Vec<f64> = (0..reps as u64)
        .into_par_iter()
        .map(|r| s * log_norm_of_product(ensemble, n, seed.index(r)))
        .collect();
    let shift = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let nf = n as f64;
    let rf = reps as f64;
    let log_mean = log_mean_exp(logs.iter().copied(), shift, rf);
    let estimate = (log_mean / nf).exp();

    // leave-one-out means from the shifted total
    let terms: Vec<f64> = logs.iter().map(|l| (l - shift).exp()).collect();
    let total: f64 = terms.iter().sum();
    let loo: Vec<f64> = terms
        .iter()
        .map(|t| {
            let rest = ((total - t) / (rf - 1.0)).max(f64::MIN_POSITIVE);
            ((shift + rest.ln()) / nf).exp()
        })
        .collect();
    let loo_mean = loo.iter().sum::<f64>() / rf;
    let var = (rf - 1.0) / rf * loo.iter().map(|x| (x - loo_mean).powi(2)).sum::<f64>();
    Ok(KappaEstimate {
        s,
        n,
        reps,
        estimate,
        stderr: var.sqrt(),
    })
}
