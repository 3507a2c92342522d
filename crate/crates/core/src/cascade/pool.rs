use rayon::prelude::*;
use serde::Serialize;

use super::uniform_index;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::norm2;
use crate::rng::StreamSeed;
use crate::spectral::{solve_spectral, DirectionGrid};

/// Smallest pool accepted by [`moment_probe`].
pub const MOMENT_MIN_POOL: usize = 10_000;
/// Below this many particles a pool is flagged as too small for tail work.
pub const TAIL_MIN_POOL: usize = 10_000;

#[derive(Debug, Clone, Serialize)]
pub struct GenerationStats {
    pub generation: usize,
    pub mean: Vec<f64>,
    pub median_norm: f64,
    /// Mean absolute difference of sorted `⟨Z,u⟩` between this generation and
    /// the previous one.
    pub proxy_distance: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct PoolOptions {
    /// Direction `u` of the sorted-projection distance; defaults to `(1,…,1)/√d`.
    pub projection: Option<Vec<f64>>,
    /// Record per-generation diagnostics.
    pub diagnostics: bool,
}

impl Default for PoolOptions {
    fn default() -> Self {
        Self {
            projection: None,
            diagnostics: true,
        }
    }
}

/// `K` samples approximating the law of `Z`, stored row-major.
#[derive(Debug, Clone)]
pub struct ParticlePool {
    dim: usize,
    particles: Vec<f64>,
    pub generation: usize,
    pub seed: u64,
    pub ensemble_hash: String,
    pub history: Vec<GenerationStats>,
    pub warnings: Vec<String>,
    projection: Vec<f64>,
    sorted_projection: Option<Vec<f64>>,
}

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    let (_, hi, _) = values.select_nth_unstable_by(n / 2, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = values[..n / 2].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

impl ParticlePool {
    /// `K` copies of `x`.
    pub fn constant(x: &[f64], k: usize, seed: u64, ensemble_hash: String, opts: &PoolOptions) -> Self {
        let dim = x.len();
        let projection = opts
            .projection
            .clone()
            .unwrap_or_else(|| vec![1.0 / (dim as f64).sqrt(); dim]);
        let mut pool = Self {
            dim,
            particles: x.iter().copied().cycle().take(k * dim).collect(),
            generation: 0,
            seed,
            ensemble_hash,
            history: Vec::new(),
            warnings: Vec::new(),
            projection,
            sorted_projection: None,
        };
        if k < TAIL_MIN_POOL {
            pool.warnings
                .push(format!("pool of {k} particles is below {TAIL_MIN_POOL}; tail estimates are unreliable"));
        }
        if opts.diagnostics {
            pool.record();
        }
        pool
    }

    pub(crate) fn from_parts(dim: usize, particles: Vec<f64>, generation: usize, seed: u64, ensemble_hash: String) -> Self {
        Self {
            dim,
            particles,
            generation,
            seed,
            ensemble_hash,
            history: Vec::new(),
            warnings: Vec::new(),
            projection: vec![1.0 / (dim as f64).sqrt(); dim],
            sorted_projection: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.particles.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> std::slice::ChunksExact<'_, f64> {
        self.particles.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.particles
    }

    pub fn norms(&self) -> Vec<f64> {
        self.iter().map(norm2).collect()
    }

    /// `⟨Z, u⟩` for every particle.
    pub fn projections(&self, u: &[f64]) -> Vec<f64> {
        self.iter().map(|z| crate::matrix::dot(z, u)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for z in self.iter() {
            m.iter_mut().zip(z).for_each(|(a, b)| *a += b);
        }
        let k = self.len() as f64;
        m.iter_mut().for_each(|a| *a /= k);
        m
    }

    pub fn median_norm(&self) -> f64 {
        median(&mut self.norms())
    }

    fn record(&mut self) {
        let mut proj = self.projections(&self.projection);
        proj.sort_unstable_by(f64::total_cmp);
        let proxy = self.sorted_projection.as_ref().map(|prev| {
            prev.iter().zip(&proj).map(|(a, b)| (a - b).abs()).sum::<f64>() / proj.len() as f64
        });
        self.history.push(GenerationStats {
            generation: self.generation,
            mean: self.mean(),
            median_norm: self.median_norm(),
            proxy_distance: proxy,
        });
        self.sorted_projection = Some(proj);
    }

    /// Applies `generations` steps of `Z_new = Σᵢ₌₁ᴺ Aᵢ Z_{σ(i)}`.
    ///
    /// Particle `i` at generation `g` draws from its own stream keyed by
    /// `(seed, g, i)`, so the pool does not depend on the worker count.
    pub fn advance(&mut self, ensemble: &Ensemble, generations: usize, diagnostics: bool) {
        let d = self.dim;
        let k = self.len();
        let root = StreamSeed::new(self.seed).label("fixpoint");
        let mut next = vec![0.0; self.particles.len()];
        for _ in 0..generations {
            let gen_seed = root.index(self.generation as u64 + 1);
            let prev = &self.particles;
            next.par_chunks_mut(d).enumerate().for_each(|(i, out)| {
                let mut rng = gen_seed.index(i as u64).rng();
                out.iter_mut().for_each(|o| *o = 0.0);
                for _ in 0..ensemble.branching().sample(&mut rng) {
                    let a = ensemble.sample(&mut rng);
                    let j = uniform_index(&mut rng, k);
                    a.apply_add(&prev[j * d..(j + 1) * d], out);
                }
            });
            std::mem::swap(&mut self.particles, &mut next);
            self.generation += 1;
            if diagnostics {
                self.record();
            }
        }
    }
}

/// Population-dynamics approximation of the fixed point, started from `K`
/// copies of the Perron vector `v`.
pub fn fixpoint_pool(
    ensemble: &Ensemble,
    k: usize,
    generations: usize,
    seed: StreamSeed,
    opts: &PoolOptions,
) -> Result<ParticlePool> {
    let v = ensemble.mean_and_perron()?.right.coords().to_vec();
    let mut pool = ParticlePool::constant(&v, k, seed.value(), ensemble.content_hash(), opts);
    pool.advance(ensemble, generations, opts.diagnostics);
    Ok(pool)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentVerdict {
    Stable,
    Diverging,
    Inconclusive,
}

#[derive(Debug, Clone, Serialize)]
pub struct MomentRow {
    pub s: f64,
    /// `(subsample size, mean |Z|^s)` on nested prefixes of the pool.
    pub estimates: Vec<(usize, f64)>,
    /// Relative change between the last two subsample sizes.
    pub last_change: f64,
    pub verdict: MomentVerdict,
    /// `κ(s)·E[N] − 1`; negative predicts a finite moment.
    pub spectral_margin: Option<f64>,
}

/// Relative change below this is `stable`.
pub const STABLE_CHANGE: f64 = 0.25;
/// Relative change at or above this is `diverging`.
pub const DIVERGING_CHANGE: f64 = 1.0;

/// Empirical `E|Z|^s` on nested subsamples of sizes 10³, 10⁴, 10⁵ and `K`.
pub fn moment_probe(pool: &ParticlePool, s_list: &[f64]) -> Result<Vec<MomentRow>> {
    let k = pool.len();
    if k < MOMENT_MIN_POOL {
        return Err(Error::PoolTooSmall {
            got: k,
            need: MOMENT_MIN_POOL,
        });
    }
    let mut sizes: Vec<usize> = [1_000, 10_000, 100_000].into_iter().filter(|&n| n < k).collect();
    sizes.push(k);
    let norms = pool.norms();
    Ok(s_list
        .iter()
        .map(|&s| {
            let mut estimates = Vec::with_capacity(sizes.len());
            let mut acc = 0.0;
            let mut done = 0;
            for &n in &sizes {
                acc += norms[done..n].iter().map(|x| x.powf(s)).sum::<f64>();
                done = n;
                estimates.push((n, acc / n as f64));
            }
            let last = estimates[estimates.len() - 1].1;
            let prev = estimates[estimates.len() - 2].1;
            let last_change = (last / prev - 1.0).abs();
            let verdict = if last_change < STABLE_CHANGE {
                MomentVerdict::Stable
            } else if last_change >= DIVERGING_CHANGE {
                MomentVerdict::Diverging
            } else {
                MomentVerdict::Inconclusive
            };
            MomentRow {
                s,
                estimates,
                last_change,
                verdict,
                spectral_margin: None,
            }
        })
        .collect())
}

/// Fills `spectral_margin` from the transfer operator on `grid`.
pub fn annotate_moments(rows: &mut [MomentRow], ensemble: &Ensemble, grid: &DirectionGrid) -> Result<()> {
    let n = ensemble.branching().mean();
    for row in rows {
        row.spectral_margin = Some(solve_spectral(ensemble, row.s, grid)?.kappa * n - 1.0);
    }
    Ok(())
}
