//! Heuristic evidence for the irreducibility/positivity condition on the
//! semigroup generated by the support of the law.
//!
//! Exact detection of invariant subspaces for a matrix semigroup is out of
//! reach, so the check combines three sub-tests:
//!
//! 1. strong connectivity of the union support digraph (necessary for the
//!    absence of invariant coordinate subspaces);
//! 2. a Boolean pattern product, over words of length at most `d² − 2d + 2`,
//!    with every entry positive (witnesses a strictly positive element);
//! 3. the dominant eigenvectors of sampled strictly positive products span
//!    `ℝ^d` (proxy for the limit set generating the whole space).
//!
//! Passing all three is evidence, not proof.

use std::collections::HashSet;

use rand::Rng;
use serde::Serialize;

use super::Ensemble;
use crate::matrix::{column_rank, power_iteration, Matrix};

/// Relative singular-value threshold for the spanning test.
pub const SPAN_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Serialize)]
pub struct ConditionReport {
    pub pattern_irreducible: bool,
    pub primitive: bool,
    /// Length of the shortest word with an all-positive pattern.
    pub primitive_word_length: Option<usize>,
    pub limit_set_spans: bool,
    pub limit_set_rank: usize,
    pub positive_products: usize,
    pub verdict: bool,
    pub notes: Vec<String>,
}

fn pattern(a: &Matrix) -> u64 {
    let d = a.dim();
    let mut bits = 0u64;
    for i in 0..d {
        for j in 0..d {
            if a.get(i, j) > 0.0 {
                bits |= 1 << (i * d + j);
            }
        }
    }
    bits
}

fn pattern_mul(p: u64, q: u64, d: usize) -> u64 {
    let mut out = 0u64;
    for i in 0..d {
        for j in 0..d {
            let hit = (0..d).any(|k| p & (1 << (i * d + k)) != 0 && q & (1 << (k * d + j)) != 0);
            if hit {
                out |= 1 << (i * d + j);
            }
        }
    }
    out
}

fn strongly_connected(ensemble: &Ensemble) -> bool {
    let d = ensemble.dim();
    let mut adj = vec![vec![false; d]; d];
    for atom in ensemble.atoms() {
        for (i, row) in adj.iter_mut().enumerate() {
            for (j, edge) in row.iter_mut().enumerate() {
                *edge |= atom.matrix().get(i, j) > 0.0;
            }
        }
    }
    let reach_all = |forward: bool| {
        let mut seen = vec![false; d];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for w in 0..d {
                let edge = if forward { adj[u][w] } else { adj[w][u] };
                if edge && !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach_all(true) && reach_all(false)
}

/// Wielandt's bound `d² − 2d + 2`.
pub fn wielandt_bound(d: usize) -> usize {
    d * d - 2 * d + 2
}

fn shortest_positive_word(ensemble: &Ensemble) -> Option<usize> {
    let d = ensemble.dim();
    let full: u64 = if d * d == 64 { u64::MAX } else { (1u64 << (d * d)) - 1 };
    let atoms: Vec<u64> = ensemble.atoms().iter().map(|a| pattern(a.matrix())).collect();
    let mut seen: HashSet<u64> = atoms.iter().copied().collect();
    let mut frontier: Vec<u64> = seen.iter().copied().collect();
    for len in 1..=wielandt_bound(d) {
        if frontier.iter().any(|&p| p == full) {
            return Some(len);
        }
        let mut next = Vec::new();
        for &p in &frontier {
            for &a in &atoms {
                let q = pattern_mul(a, p, d);
                if seen.insert(q) {
                    next.push(q);
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    None
}

const EXTRA_FACTORS: usize = 7;

/// A random product of atoms, extended until strictly positive or until
/// `max_len` factors, then by up to `EXTRA_FACTORS` further factors so that
/// word lengths vary. Rescaled to unit max entry; the log of the scale is
/// returned alongside.
pub(crate) fn sample_positive_product<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    max_len: usize,
    rng: &mut R,
) -> Option<(Matrix, f64)> {
    let mut product = ensemble.sample(rng).clone();
    let mut log_scale = 0.0;
    for len in 1..=max_len {
        let s = product.max_abs();
        product = product.scale(1.0 / s);
        log_scale += s.ln();
        if product.is_strictly_positive() {
            // right factors without zero columns keep the product positive
            for _ in 0..rng.random_range(0..=EXTRA_FACTORS) {
                product = product.mul(ensemble.sample(rng));
                let s = product.max_abs();
                product = product.scale(1.0 / s);
                log_scale += s.ln();
            }
            return Some((product, log_scale));
        }
        if len < max_len {
            product = ensemble.sample(rng).mul(&product);
        }
    }
    None
}

fn product_length_cap(d: usize) -> usize {
    4 * wielandt_bound(d)
}

pub fn check_condition_c<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    product_samples: usize,
    rng: &mut R,
) -> ConditionReport {
    let d = ensemble.dim();
    let mut notes = Vec::new();
    let pattern_irreducible = strongly_connected(ensemble);
    if !pattern_irreducible {
        notes.push("support digraph not strongly connected".to_string());
    }
    let primitive_word_length = shortest_positive_word(ensemble);
    let primitive = primitive_word_length.is_some();
    if !primitive {
        notes.push(format!(
            "no all-positive pattern among words of length ≤ {}",
            wielandt_bound(d)
        ));
    }

    let mut directions = Vec::new();
    if primitive {
        for _ in 0..product_samples {
            if let Some((p, _)) = sample_positive_product(ensemble, product_length_cap(d), rng) {
                if let Ok((_, v, _)) = power_iteration(&p, 1e-14, 10_000) {
                    directions.push(v);
                }
            }
        }
    }
    let limit_set_rank = column_rank(&directions, SPAN_RANK_TOL);
    let limit_set_spans = limit_set_rank == d;
    if !limit_set_spans {
        notes.push(format!(
            "dominant directions of {} positive products span a subspace of rank {limit_set_rank} < {d}",
            directions.len()
        ));
    }
    notes.push("sub-checks (i) and (iii) are heuristic necessary evidence, not a proof".to_string());
    ConditionReport {
        pattern_irreducible,
        primitive,
        primitive_word_length,
        limit_set_spans,
        limit_set_rank,
        positive_products: directions.len(),
        verdict: pattern_irreducible && primitive && limit_set_spans,
        notes,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LatticeVerdict {
    /// The log-eigenvalues sit on a lattice `δℤ`; the spectrum looks arithmetic.
    ArithmeticLike,
    ConsistentWithDense,
    InsufficientSamples,
}

#[derive(Debug, Clone, Serialize)]
pub struct LatticeReport {
    pub samples: usize,
    pub distinct_values: usize,
    /// Best lattice spacing found.
    pub spacing: Option<f64>,
    /// `max_i dist(ℓᵢ/δ, ℤ)` at the best spacing, in `[0, 0.5]`.
    pub residual: Option<f64>,
    pub verdict: LatticeVerdict,
}

/// Residual below which the log-eigenvalues are declared lattice-like.
pub const LATTICE_RESIDUAL_TOL: f64 = 1e-6;
const SPACING_FLOOR: f64 = 1e-9;
const SPACING_CANDIDATES: usize = 16;

/// Fits a lattice `δℤ` to log-eigenvalues. Candidate spacings are the
/// smallest gaps between sorted distinct values and the smallest absolute
/// values; the residual is the worst distance to the nearest lattice point in
/// units of `δ`.
pub fn lattice_fit(log_eigs: &[f64]) -> (usize, Option<(f64, f64)>) {
    let mut values = log_eigs.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs().max(1.0));
    let distinct = values.len();
    if distinct < 2 {
        return (distinct, None);
    }
    let mut candidates: Vec<f64> = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .chain(values.iter().map(|v| v.abs()))
        .filter(|&g| g > SPACING_FLOOR)
        .collect();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * a.abs());
    candidates.truncate(SPACING_CANDIDATES);
    let residual = |delta: f64| {
        values
            .iter()
            .map(|v| {
                let q = v / delta;
                (q - q.round()).abs()
            })
            .fold(0.0, f64::max)
    };
    let best = candidates
        .into_iter()
        .map(|delta| (delta, residual(delta)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    (distinct, best)
}

/// Collects `log λ_a` of sampled strictly positive products and tests whether
/// they lie on a lattice.
pub fn lattice_diagnostic<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    product_samples: usize,
    rng: &mut R,
) -> LatticeReport {
    let cap = product_length_cap(ensemble.dim());
    let mut logs = Vec::with_capacity(product_samples);
    for _ in 0..product_samples {
        if let Some((p, log_scale)) = sample_positive_product(ensemble, cap, rng) {
            if let Ok((lambda, _, _)) = power_iteration(&p, 1e-14, 10_000) {
                logs.push(lambda.ln() + log_scale);
            }
        }
    }
    lattice_report(&logs)
}

pub(crate) fn lattice_report(logs: &[f64]) -> LatticeReport {
    let (distinct, fit) = lattice_fit(logs);
    let verdict = match fit {
        None => LatticeVerdict::InsufficientSamples,
        Some((_, r)) if r < LATTICE_RESIDUAL_TOL => LatticeVerdict::ArithmeticLike,
        Some(_) => LatticeVerdict::ConsistentWithDense,
    };
    LatticeReport {
        samples: logs.len(),
        distinct_values: distinct,
        spacing: fit.map(|f| f.0),
        residual: fit.map(|f| f.1),
        verdict,
    }
}
