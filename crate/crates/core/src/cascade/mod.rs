//! The cascade martingale `Yₙ = Σ_{|γ|=n} P_γ v` on random labelled trees,
//! and a population-dynamics approximation of the fixed point of
//! `Z ↦ Σᵢ₌₁ᴺ AᵢZᵢ`.

mod pool;
mod snapshot;

pub use pool::{annotate_moments, fixpoint_pool, moment_probe, GenerationStats, MomentRow, MomentVerdict, ParticlePool, PoolOptions, MOMENT_MIN_POOL, TAIL_MIN_POOL};
pub use snapshot::{read_snapshot, write_snapshot, SnapshotHeader, SNAPSHOT_MAGIC};

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{StreamRng, StreamSeed};

/// `|r(m)·E[N] − 1|` allowed for a calibrated ensemble.
pub const CALIBRATION_TOL: f64 = 1e-10;
/// Default bound on `n·log E[N]`: about 65 000 expected leaves per tree.
pub const DEFAULT_LOG_WORK_CAP: f64 = 16.0 * std::f64::consts::LN_2;

#[derive(Debug, Clone)]
pub struct CascadeConfig {
    pub ensemble: Ensemble,
    pub depth: usize,
    pub replicas: usize,
    pub seed: StreamSeed,
    /// Bound on `depth·log E[N]`.
    pub log_work_cap: f64,
    v: Vec<f64>,
    calibration: f64,
}

impl CascadeConfig {
    /// Validates calibration and the work cap.
    pub fn new(ensemble: Ensemble, depth: usize, replicas: usize, seed: StreamSeed) -> Result<Self> {
        let cfg = Self::unchecked(ensemble, depth, replicas, seed)?;
        if (cfg.calibration - 1.0).abs() > CALIBRATION_TOL {
            return Err(Error::NotCalibrated(cfg.calibration));
        }
        Ok(cfg)
    }

    /// Skips the calibration check, for demonstrating what miscalibration does.
    pub fn unchecked(ensemble: Ensemble, depth: usize, replicas: usize, seed: StreamSeed) -> Result<Self> {
        let perron = ensemble.mean_and_perron()?;
        let calibration = perron.radius * ensemble.branching().mean();
        let cfg = Self {
            v: perron.right.coords().to_vec(),
            calibration,
            ensemble,
            depth,
            replicas,
            seed,
            log_work_cap: DEFAULT_LOG_WORK_CAP,
        };
        cfg.check_work(depth)?;
        Ok(cfg)
    }

    pub fn with_log_work_cap(mut self, cap: f64) -> Result<Self> {
        self.log_work_cap = cap;
        self.check_work(self.depth)?;
        Ok(self)
    }

    fn check_work(&self, depth: usize) -> Result<()> {
        let log_work = depth as f64 * self.ensemble.branching().mean().ln();
        if log_work > self.log_work_cap + 1e-12 {
            return Err(Error::WorkCapExceeded(format!(
                "depth {depth} needs n·log E[N] = {log_work:.3}, cap is {:.3}",
                self.log_work_cap
            )));
        }
        Ok(())
    }

    /// Perron vector `v` of `m`, unit length.
    pub fn v(&self) -> &[f64] {
        &self.v
    }

    /// `r(m)·E[N]`
    pub fn calibration(&self) -> f64 {
        self.calibration
    }
}

fn add_assign(acc: &mut [f64], x: &[f64]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += b);
}

/// Depth-first evaluation of `value(γ) = Σᵢ Aᵢ value(γi)` with leaves `v`.
fn tree_value(ensemble: &Ensemble, v: &[f64], depth: usize, rng: &mut StreamRng) -> Vec<f64> {
    if depth == 0 {
        return v.to_vec();
    }
    let mut acc = vec![0.0; v.len()];
    let children = ensemble.branching().sample(rng);
    for _ in 0..children {
        let a = ensemble.sample(rng);
        let child = tree_value(ensemble, v, depth - 1, rng);
        a.apply_add(&child, &mut acc);
    }
    acc
}

/// One realization of `Yₙ` for replica `replica`.
pub fn simulate_yn(config: &CascadeConfig, replica: u64) -> Vec<f64> {
    let mut rng = config.seed.label("cascade").index(replica).rng();
    tree_value(&config.ensemble, &config.v, config.depth, &mut rng)
}

/// `config.replicas` independent realizations of `Yₙ`, in replica order.
pub fn simulate_replicas(config: &CascadeConfig) -> Vec<Vec<f64>> {
    (0..config.replicas as u64)
        .into_par_iter()
        .map(|r| simulate_yn(config, r))
        .collect()
}

/// Componentwise sample mean and standard error.
pub fn mean_and_stderr(samples: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = samples.first().map_or(0, Vec::len);
    let n = samples.len() as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        add_assign(&mut mean, s);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            var[i] += (s[i] - mean[i]).powi(2);
        }
    }
    let stderr = var.iter().map(|v| (v / (n - 1.0).max(1.0) / n).sqrt()).collect();
    (mean, stderr)
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleMean {
    pub depth: usize,
    pub replicas: usize,
    pub v: Vec<f64>,
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    /// `(meanᵢ − vᵢ)/stderrᵢ`, 0 where the difference is rounding noise.
    pub z: Vec<f64>,
    pub within_three_stderr: bool,
}

/// Differences below this fraction of the compared value count as rounding.
const ROUNDING_REL: f64 = 1e-13;

fn z_score(diff: f64, se: f64, scale: f64) -> f64 {
    if diff.abs() <= ROUNDING_REL * scale.abs() {
        0.0
    } else if se == 0.0 {
        f64::INFINITY.copysign(diff)
    } else {
        diff / se
    }
}

/// Replica mean of `Yₙ` compared against `E Yₙ = v`.
pub fn martingale_mean(config: &CascadeConfig) -> MartingaleMean {
    martingale_mean_of(config, &simulate_replicas(config))
}

/// [`martingale_mean`] over samples already drawn for `config`.
pub fn martingale_mean_of(config: &CascadeConfig, samples: &[Vec<f64>]) -> MartingaleMean {
    let (mean, stderr) = mean_and_stderr(samples);
    let z: Vec<f64> = (0..mean.len()).map(|i| z_score(mean[i] - config.v[i], stderr[i], config.v[i])).collect();
    MartingaleMean {
        depth: config.depth,
        replicas: samples.len(),
        v: config.v.clone(),
        within_three_stderr: z.iter().all(|z| z.abs() <= 3.0),
        mean,
        stderr,
        z,
    }
}

/// Leaf products `P_γ` (with multiplicity) of one tree frozen at `depth`.
fn frozen_products(ensemble: &Ensemble, depth: usize, rng: &mut StreamRng) -> Vec<Matrix> {
    let mut level = vec![Matrix::identity(ensemble.dim())];
    for _ in 0..depth {
        let mut next = Vec::new();
        for p in &level {
            for _ in 0..ensemble.branching().sample(rng) {
                next.push(p.mul(ensemble.sample(rng)));
            }
        }
        level = next;
    }
    level
}

#[derive(Debug, Clone, Serialize)]
pub struct MartingaleStepReport {
    pub depth: usize,
    pub trees: usize,
    pub extensions: usize,
    /// Largest componentwise `|E[Y_{n+1}|Fₙ] − Yₙ| / stderr` over all trees.
    pub max_z: f64,
    /// `|mean Y_{n+1}| / |mean Yₙ|` over all trees and extensions.
    pub mean_ratio: f64,
    pub pass: bool,
}

/// Minimum number of one-level extensions per frozen tree.
pub const MIN_EXTENSIONS: usize = 64;
/// Largest `|z|` accepted by [`martingale_step_check`].
pub const MAX_STEP_Z: f64 = 4.0;

/// Freezes `trees` random trees at `config.depth`, extends each by one level
/// `extensions` times, and compares the conditional mean of `Y_{n+1}` with
/// `Yₙ`.
pub fn martingale_step_check(config: &CascadeConfig, trees: usize, extensions: usize) -> Result<MartingaleStepReport> {
    config.check_work(config.depth + 1)?;
    let extensions = extensions.max(MIN_EXTENSIONS);
    let seed = config.seed.label("martingale-step");
    let ens = &config.ensemble;
    let d = ens.dim();
    let v = &config.v;
    let per_tree: Vec<(f64, Vec<f64>, Vec<f64>)> = (0..trees as u64)
        .into_par_iter()
        .map(|t| {
            let mut rng = seed.index(t).rng();
            let products = frozen_products(ens, config.depth, &mut rng);
            let mut yn = vec![0.0; d];
            for p in &products {
                p.apply_add(v, &mut yn);
            }
            let ext_seed = seed.label("extension").index(t);
            let samples: Vec<Vec<f64>> = (0..extensions as u64)
                .map(|m| {
                    let mut rng = ext_seed.index(m).rng();
                    let mut y = vec![0.0; d];
                    let mut child = vec![0.0; d];
                    for p in &products {
                        child.iter_mut().for_each(|c| *c = 0.0);
                        for _ in 0..ens.branching().sample(&mut rng) {
                            ens.sample(&mut rng).apply_add(v, &mut child);
                        }
                        p.apply_add(&child, &mut y);
                    }
                    y
                })
                .collect();
            let (mean, stderr) = mean_and_stderr(&samples);
            let z = (0..d)
                .map(|i| z_score(mean[i] - yn[i], stderr[i], yn[i]).abs())
                .fold(0.0, f64::max);
            (z, yn, mean)
        })
        .collect();
    let mut sum_n = vec![0.0; d];
    let mut sum_next = vec![0.0; d];
    let mut max_z: f64 = 0.0;
    for (z, yn, next) in &per_tree {
        max_z = max_z.max(*z);
        add_assign(&mut sum_n, yn);
        add_assign(&mut sum_next, next);
    }
    let norm = crate::matrix::norm2;
    let mean_ratio = norm(&sum_next) / norm(&sum_n);
    Ok(MartingaleStepReport {
        depth: config.depth,
        trees,
        extensions,
        max_z,
        mean_ratio,
        pass: max_z <= MAX_STEP_Z,
    })
}

/// Uniform index in `0..n`.
#[inline]
pub(crate) fn uniform_index(rng: &mut StreamRng, n: usize) -> usize {
    rng.random_range(0..n)
}
