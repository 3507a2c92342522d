//! Heavy-tail diagnostics of a fixed-point pool: Hill estimates of the tail
//! index of `⟨Z,u⟩`, the tail constant `D(u)`, and its homogeneity and
//! harmonicity structure.

use rand::Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::Serialize;

use crate::cascade::ParticlePool;
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::norm2;
use crate::rng::StreamSeed;
use crate::spectral::{DirectionGrid, SpectralResult};

/// Smallest order-statistic count accepted by [`hill`].
pub const HILL_MIN_K: usize = 50;
/// Smallest pool accepted by [`tail_scan`].
pub const TAIL_SCAN_MIN_POOL: usize = 100_000;
/// Largest `k` as a fraction of the sample size.
pub const MAX_K_FRACTION: f64 = 0.05;
pub const BOOTSTRAP_RESAMPLES: usize = 200;
/// Regression slope of `log χ̂` on `log k` above which no plateau is declared.
pub const PLATEAU_SLOPE_TOL: f64 = 0.05;
/// Acceptance band for harmonicity ratios.
pub const HARMONICITY_BAND: (f64, f64) = (0.8, 1.25);
pub const MIN_SHAPE_DIRECTIONS: usize = 5;
pub const SHAPE_CORRELATION_MIN: f64 = 0.9;

/// Top `m` values of `x`, sorted decreasingly.
pub fn top_sorted(x: &[f64], m: usize) -> Vec<f64> {
    let m = m.min(x.len());
    let mut v = x.to_vec();
    if m < v.len() {
        v.select_nth_unstable_by(m, |a, b| b.total_cmp(a));
        v.truncate(m + 1);
    }
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    v.truncate(m);
    v
}

/// Hill estimates from decreasingly sorted values at each `k` in `ks`.
/// Needs `desc.len() > k` for every `k`.
fn hill_sorted(desc: &[f64], ks: &[usize]) -> Result<Vec<f64>> {
    ks.iter()
        .map(|&k| {
            let base = desc[k];
            if desc[0] <= base {
                return Err(Error::DegenerateTail);
            }
            // ratios rather than differences of logs: exact under power-of-two scaling
            let mean = desc[..k].iter().map(|x| (x / base).ln()).sum::<f64>() / k as f64;
            Ok(1.0 / mean)
        })
        .collect()
}

/// `[(1/k) Σᵢ₌₁ᵏ log(X₍ᵢ₎/X₍ₖ₊₁₎)]⁻¹` over positive samples.
pub fn hill(samples: &[f64], k: usize) -> Result<f64> {
    if k < HILL_MIN_K {
        return Err(Error::TooFewSamples { need: HILL_MIN_K, got: k });
    }
    if samples.len() <= k {
        return Err(Error::TooFewSamples {
            need: k + 1,
            got: samples.len(),
        });
    }
    let desc = top_sorted(samples, k + 1);
    Ok(hill_sorted(&desc, &[k])?[0])
}

/// Smallest default `k` as a fraction of the sample size.
pub const DEFAULT_K_MIN_FRACTION: f64 = 0.001;
/// Largest default `k` as a fraction of the sample size.
pub const DEFAULT_K_MAX_FRACTION: f64 = 0.02;

/// 21 log-spaced values of `k` from 0.1% to 2% of `n` (never below 50).
pub fn default_k_grid(n: usize) -> Vec<usize> {
    let lo = ((n as f64 * DEFAULT_K_MIN_FRACTION) as usize).max(HILL_MIN_K);
    let hi = ((n as f64 * DEFAULT_K_MAX_FRACTION) as usize).max(lo);
    let steps = 20;
    let ratio = hi as f64 / lo as f64;
    let mut ks: Vec<usize> = (0..=steps)
        .map(|i| (lo as f64 * ratio.powf(i as f64 / steps as f64)).round() as usize)
        .collect();
    ks.dedup();
    ks
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TailVerdict {
    HeavyTail,
    NoHeavyTail,
}

#[derive(Debug, Clone, Serialize)]
pub struct Plateau {
    pub k: usize,
    pub chi_hat: f64,
    /// `|Δχ̂/Δlog k|` at the chosen `k`.
    pub local_slope: f64,
    /// Least-squares slope of `log χ̂` against `log k` over the whole grid.
    pub drift: f64,
    pub verdict: TailVerdict,
}

/// Half-width of the window over which the local slope of `χ̂(k)` is fitted.
pub const PLATEAU_HALF_WINDOW: usize = 2;

fn ls_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx > 0.0 {
        sxy / sxx
    } else {
        0.0
    }
}

/// Picks the `k` minimizing `|dχ̂/dlog k|`, the slope being a least-squares
/// fit over the neighboring grid points.
pub fn plateau(curve: &[(usize, f64)]) -> Plateau {
    let lk: Vec<f64> = curve.iter().map(|&(k, _)| (k as f64).ln()).collect();
    let chis: Vec<f64> = curve.iter().map(|c| c.1).collect();
    let w = PLATEAU_HALF_WINDOW;
    let mut best = (0, f64::INFINITY);
    if curve.len() > 2 * w {
        for i in w..curve.len() - w {
            let slope = ls_slope(&lk[i - w..=i + w], &chis[i - w..=i + w]).abs();
            if slope < best.1 {
                best = (i, slope);
            }
        }
    }
    let ly: Vec<f64> = chis.iter().map(|c| c.ln()).collect();
    let drift = ls_slope(&lk, &ly);
    let (k, chi_hat) = curve[best.0];
    Plateau {
        k,
        chi_hat,
        local_slope: if best.1.is_finite() { best.1 } else { 0.0 },
        drift,
        verdict: if drift.abs() <= PLATEAU_SLOPE_TOL {
            TailVerdict::HeavyTail
        } else {
            TailVerdict::NoHeavyTail
        },
    }
}

/// Hill curve over `ks` and its plateau.
pub fn hill_scan(samples: &[f64], ks: &[usize]) -> Result<(Vec<(usize, f64)>, Plateau)> {
    let kmax = *ks.iter().max().ok_or(Error::TooFewSamples { need: 1, got: 0 })?;
    if ks.iter().any(|&k| k < HILL_MIN_K) {
        return Err(Error::TooFewSamples {
            need: HILL_MIN_K,
            got: *ks.iter().min().unwrap(),
        });
    }
    if samples.len() <= kmax {
        return Err(Error::TooFewSamples {
            need: kmax + 1,
            got: samples.len(),
        });
    }
    let desc = top_sorted(samples, kmax + 1);
    let chis = hill_sorted(&desc, ks)?;
    let curve: Vec<(usize, f64)> = ks.iter().copied().zip(chis).collect();
    let p = plateau(&curve);
    Ok((curve, p))
}

/// Median over `t` log-spaced in `[X₍ₖ₊₁₎, 10·X₍ₖ₊₁₎]` of `t^χ · #{X > t}/n`.
///
/// `desc` must hold at least the `k + 1` largest values, sorted decreasingly.
pub fn tail_constant_sorted(desc: &[f64], n: usize, k: usize, chi: f64) -> f64 {
    const POINTS: usize = 16;
    let q = desc[k];
    let mut vals: Vec<f64> = (0..POINTS)
        .map(|i| {
            let t = q * 10f64.powf(i as f64 / (POINTS - 1) as f64);
            let count = desc.partition_point(|&x| x > t);
            t.powf(chi) * count as f64 / n as f64
        })
        .collect();
    vals.sort_unstable_by(f64::total_cmp);
    0.5 * (vals[POINTS / 2 - 1] + vals[POINTS / 2])
}

pub fn tail_constant(samples: &[f64], k: usize, chi: f64) -> f64 {
    let desc = top_sorted(samples, k + 1);
    tail_constant_sorted(&desc, samples.len(), k, chi)
}

/// Resampled top order statistics: of `n` draws with replacement, the number
/// landing among the top `m` ranks is binomial, and those draws are uniform
/// on the top `m`.
fn bootstrap_top(desc: &[f64], n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let m = desc.len();
    let hits = Binomial::new(n as u64, m as f64 / n as f64)
        .expect("valid binomial")
        .sample(rng) as usize;
    let mut idx: Vec<usize> = (0..hits).map(|_| rng.random_range(0..m)).collect();
    idx.sort_unstable();
    idx.into_iter().map(|i| desc[i]).collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TailReport {
    pub direction: Vec<f64>,
    pub chi_hat: f64,
    pub k_used: usize,
    pub chi_spectral: f64,
    pub d_hat: f64,
    /// Filled by [`harmonicity_check`] when run over this direction.
    pub harmonicity_ratio: Option<f64>,
    /// Bootstrap 90% interval for `chi_hat`.
    pub ci: (f64, f64),
    pub pool_size: usize,
    pub k_curve: Vec<(usize, f64)>,
    pub plateau: Plateau,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct TailOptions {
    pub k_grid: Option<Vec<usize>>,
    pub bootstrap: usize,
    pub seed: StreamSeed,
}

impl Default for TailOptions {
    fn default() -> Self {
        Self {
            k_grid: None,
            bootstrap: BOOTSTRAP_RESAMPLES,
            seed: StreamSeed::new(0),
        }
    }
}

fn check_tail_preconditions(pool: &ParticlePool, ensemble: &Ensemble) -> Result<Vec<String>> {
    if pool.len() < TAIL_SCAN_MIN_POOL {
        return Err(Error::PoolTooSmall {
            got: pool.len(),
            need: TAIL_SCAN_MIN_POOL,
        });
    }
    if !ensemble.branching().is_constant() {
        return Err(Error::NonConstantBranching);
    }
    if pool.dim() != ensemble.dim() {
        return Err(Error::DimensionMismatch {
            expected: ensemble.dim(),
            got: pool.dim(),
        });
    }
    let moments = crate::ensemble::hypothesis_moments(ensemble, 1.0);
    Ok(moments.warnings)
}

fn positive_projections(pool: &ParticlePool, u: &[f64]) -> Result<Vec<f64>> {
    let proj = pool.projections(u);
    let zeros = proj.iter().filter(|&&x| !(x > 0.0)).count();
    if zeros * 2 > proj.len() {
        return Err(Error::DegenerateTail);
    }
    Ok(proj.into_iter().filter(|&x| x > 0.0).collect())
}

/// Hill plateau, tail constant and bootstrap interval for `⟨Z,u⟩`.
pub fn tail_scan(
    pool: &ParticlePool,
    ensemble: &Ensemble,
    u: &[f64],
    chi_spectral: f64,
    opts: &TailOptions,
) -> Result<TailReport> {
    let warnings = check_tail_preconditions(pool, ensemble)?;
    let x = positive_projections(pool, u)?;
    let n = x.len();
    let ks = opts.k_grid.clone().unwrap_or_else(|| default_k_grid(n));
    let (curve, plat) = hill_scan(&x, &ks)?;
    let k = plat.k;
    // enough headroom that bootstrap resamples keep k+1 values in the top block
    let m = (4 * (k + 1)).min(n);
    let desc = top_sorted(&x, m);
    let d_hat = tail_constant_sorted(&desc, n, k, chi_spectral);

    let seed = opts.seed.label("tail-bootstrap");
    let mut boot: Vec<f64> = (0..opts.bootstrap as u64)
        .into_par_iter()
        .filter_map(|b| {
            let mut rng = seed.index(b).rng();
            let top = bootstrap_top(&desc, n, &mut rng);
            (top.len() > k).then(|| hill_sorted(&top, &[k]).ok().map(|v| v[0])).flatten()
        })
        .collect();
    boot.sort_unstable_by(f64::total_cmp);
    let ci = if boot.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let q = |p: f64| boot[((p * (boot.len() - 1) as f64).round() as usize).min(boot.len() - 1)];
        (q(0.05), q(0.95))
    };
    Ok(TailReport {
        direction: u.to_vec(),
        chi_hat: plat.chi_hat,
        k_used: k,
        chi_spectral,
        d_hat,
        harmonicity_ratio: None,
        ci,
        pool_size: pool.len(),
        k_curve: curve,
        plateau: plat,
        warnings,
    })
}

/// `D̂(u)` at a common order-statistic count `k` for every direction.
pub fn tail_constants(pool: &ParticlePool, directions: &[Vec<f64>], k: usize, chi: f64) -> Result<Vec<f64>> {
    directions
        .iter()
        .map(|u| {
            let x = positive_projections(pool, u)?;
            if x.len() <= k {
                return Err(Error::TooFewSamples {
                    need: k + 1,
                    got: x.len(),
                });
            }
            Ok(tail_constant(&x, k, chi))
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct HarmonicityRow {
    pub direction: Vec<f64>,
    /// `N·Σₖ pₖ |aₖᵀu|^χ F(aₖᵀ·u) / F(u)` with `F` the estimated tail constant.
    pub ratio: f64,
    /// Same with `F = e⁎^χ` from the dual transfer operator, when available.
    pub eigenfunction_ratio: Option<f64>,
    pub in_band: bool,
}

/// Harmonicity ratios for an arbitrary positive function `f` on directions.
pub fn harmonicity_ratio(ensemble: &Ensemble, chi: f64, u: &[f64], mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<f64> {
    let n = f64::from(ensemble.branching().max());
    let base = f(u)?;
    let mut lhs = 0.0;
    for atom in ensemble.atoms() {
        let w = atom.matrix().transpose().apply(u);
        let r = norm2(&w);
        let dir: Vec<f64> = w.iter().map(|c| c / r).collect();
        lhs += atom.weight() * r.powf(chi) * f(&dir)?;
    }
    Ok(n * lhs / base)
}

/// Harmonicity of `D̂` on `directions`. `D̂` is estimated on demand at `u`
/// and at every `aₖᵀ·u`, all at the same order-statistic count `k`. With a
/// dual spectral result at `χ`, the exact-identity variant is also computed.
pub fn harmonicity_check(
    pool: &ParticlePool,
    ensemble: &Ensemble,
    chi: f64,
    directions: &[Vec<f64>],
    k: usize,
    dual: Option<(&SpectralResult, &DirectionGrid)>,
) -> Result<Vec<HarmonicityRow>> {
    check_tail_preconditions(pool, ensemble)?;
    directions
        .iter()
        .map(|u| {
            let ratio = harmonicity_ratio(ensemble, chi, u, |w| {
                let x = positive_projections(pool, w)?;
                Ok(tail_constant(&x, k, chi))
            })?;
            let eigenfunction_ratio = dual
                .map(|(d, grid)| harmonicity_ratio(ensemble, chi, u, |w| Ok(d.eigenfunction_at(grid, w))))
                .transpose()?;
            Ok(HarmonicityRow {
                direction: u.clone(),
                ratio,
                eigenfunction_ratio,
                in_band: (HARMONICITY_BAND.0..=HARMONICITY_BAND.1).contains(&ratio),
            })
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct ShapeComparison {
    pub directions: Vec<Vec<f64>>,
    pub d_hat: Vec<f64>,
    pub e_dual: Vec<f64>,
    pub correlation: f64,
    pub pass: bool,
}

/// Pearson correlation between `D̂(u)` and `e⁎^χ(u)` across directions.
pub fn compare_shapes(
    directions: &[Vec<f64>],
    d_hat: &[f64],
    dual: &SpectralResult,
    grid: &DirectionGrid,
) -> Result<ShapeComparison> {
    if directions.len() < MIN_SHAPE_DIRECTIONS {
        return Err(Error::InsufficientDirections {
            need: MIN_SHAPE_DIRECTIONS,
            got: directions.len(),
        });
    }
    let e_dual: Vec<f64> = directions.iter().map(|u| dual.eigenfunction_at(grid, u)).collect();
    let correlation = pearson(d_hat, &e_dual);
    Ok(ShapeComparison {
        directions: directions.to_vec(),
        d_hat: d_hat.to_vec(),
        e_dual,
        correlation,
        pass: correlation >= SHAPE_CORRELATION_MIN,
    })
}

/// `count` unit directions of the dual orthant for `d = 2` (angles evenly
/// spaced in `[0, π/2]`), or the coordinate axes, the diagonal and pairwise
/// midpoints for `d ≥ 3`.
pub fn auto_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        let count = count.max(2);
        return (0..count)
            .map(|i| {
                let a = std::f64::consts::FRAC_PI_2 * i as f64 / (count - 1) as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    let mut dirs = Vec::new();
    let unit = |v: Vec<f64>| {
        let n = norm2(&v);
        v.into_iter().map(|c| c / n).collect::<Vec<f64>>()
    };
    dirs.push(unit(vec![1.0; dim]));
    for i in 0..dim {
        let mut v = vec![0.0; dim];
        v[i] = 1.0;
        dirs.push(v);
    }
    'outer: for i in 0..dim {
        for j in i + 1..dim {
            if dirs.len() >= count {
                break 'outer;
            }
            let mut v = vec![0.0; dim];
            v[i] = 1.0;
            v[j] = 1.0;
            dirs.push(unit(v));
        }
    }
    dirs.truncate(count.max(1));
    dirs
}

/// Rows of `ranks.csv`: decreasing `⟨Z,u⟩` with empirical tail probability
/// `rank/n`, for the top `m` values.
pub fn rank_table(pool: &ParticlePool, u: &[f64], m: usize) -> Vec<(f64, f64)> {
    let x = pool.projections(u);
    let n = x.len() as f64;
    top_sorted(&x, m)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v, (i + 1) as f64 / n))
        .collect()
}

/// `⟨v*, ·⟩` direction of the pool's ensemble, as a unit vector.
pub fn perron_dual_direction(ensemble: &Ensemble) -> Result<Vec<f64>> {
    Ok(ensemble.mean_and_perron()?.left.coords().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn pareto(alpha: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(seed);
        (0..n).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / alpha)).collect()
    }

    #[test]
    fn hill_recovers_pareto_index() {
        let x = pareto(1.5, 1_000_000, 7);
        for k in [500usize, 2000, 5000] {
            let c = hill(&x, k).unwrap();
            assert!((c - 1.5).abs() <= 3.0 * 1.5 / (k as f64).sqrt(), "k={k}: {c}");
        }
    }

    #[test]
    fn constant_samples_are_degenerate() {
        assert!(matches!(hill(&vec![2.0; 1000], 100), Err(Error::DegenerateTail)));
    }

    #[test]
    fn small_k_is_rejected() {
        assert!(matches!(hill(&[1.0, 2.0, 3.0], 2), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn exponential_has_no_plateau() {
        let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(3);
        let x: Vec<f64> = (0..1_000_000).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
        let (_, p) = hill_scan(&x, &default_k_grid(x.len())).unwrap();
        assert_eq!(p.verdict, TailVerdict::NoHeavyTail);
        let y = pareto(1.5, 1_000_000, 4);
        let (_, p) = hill_scan(&y, &default_k_grid(y.len())).unwrap();
        assert_eq!(p.verdict, TailVerdict::HeavyTail);
    }

    #[test]
    fn pareto_tail_constant() {
        // P[cX > t] = c^α t^{-α} for Pareto X
        let c: f64 = 3.0;
        let x: Vec<f64> = pareto(1.5, 1_000_000, 11).into_iter().map(|v| c * v).collect();
        let d = tail_constant(&x, 2000, 1.5);
        let exact = c.powf(1.5);
        assert!((d / exact - 1.0).abs() < 0.1, "{d} vs {exact}");
    }

    #[test]
    fn scale_equivariance() {
        let x = pareto(1.7, 200_000, 5);
        let lam = 4.0f64;
        let y: Vec<f64> = x.iter().map(|v| v * lam).collect();
        assert_eq!(hill(&x, 1000).unwrap(), hill(&y, 1000).unwrap());
        let dx = tail_constant(&x, 1000, 1.7);
        let dy = tail_constant(&y, 1000, 1.7);
        assert!((dy / (dx * lam.powf(1.7)) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn bootstrap_top_has_resample_size_distribution() {
        let desc: Vec<f64> = (0..400).rev().map(f64::from).collect();
        let mut rng = StreamSeed::new(1).rng();
        let mean = (0..200).map(|_| bootstrap_top(&desc, 100_000, &mut rng).len() as f64).sum::<f64>() / 200.0;
        assert!((mean - 400.0).abs() < 10.0);
    }

    #[test]
    fn pearson_controls() {
        let e = [0.2, 0.5, 0.9, 1.0, 0.7];
        let d: Vec<f64> = e.iter().map(|v| 3.0 * v).collect();
        assert!((pearson(&d, &e) - 1.0).abs() < 1e-12);
        let mut rng = StreamSeed::new(9).rng();
        let xs: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        let ys: Vec<f64> = (0..5000).map(|_| rng.random()).collect();
        assert!(pearson(&xs, &ys).abs() < 0.05);
    }

    #[test]
    fn auto_directions_are_unit_and_nonnegative() {
        for d in [2, 3, 4] {
            for u in auto_directions(d, 8) {
                assert!((norm2(&u) - 1.0).abs() < 1e-12);
                assert!(u.iter().all(|&c| c >= 0.0));
            }
        }
        assert_eq!(auto_directions(2, 8).len(), 8);
    }
}
