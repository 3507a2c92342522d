//! Geometry of the nonnegative orthant `C = ℝ₊^d` and its unit slice `C₁`.
//!
//! The dual cone of the orthant is the orthant itself, so dual directions
//! reuse [`UnitDirection`].

use rand::Rng;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::{norm2, Matrix};

/// A point of the closed cone: every coordinate is nonnegative.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeVector(Vec<f64>);

impl ConeVector {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.iter().any(|&c| !(c >= 0.0) || !c.is_finite()) {
            return Err(Error::InvalidModel {
                path: "vector".into(),
                message: "coordinates must be finite and nonnegative".into(),
            });
        }
        Ok(Self(coords))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// Membership in `C₊ = C ∖ {0}`.
    pub fn is_nonzero(&self) -> bool {
        self.0.iter().any(|&c| c > 0.0)
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point of `C₁ = {x ∈ C : |x| = 1}` (Euclidean norm).
#[derive(Debug, Clone, PartialEq)]
pub struct UnitDirection(Vec<f64>);

impl UnitDirection {
    /// Normalizes a raw nonnegative vector.
    pub fn from_coords(coords: &[f64]) -> Result<Self> {
        normalize(&ConeVector::new(coords.to_vec())?)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_cone_vector(&self) -> ConeVector {
        ConeVector(self.0.clone())
    }

    /// Projective action `a·x = ax/|ax|`.
    pub fn act(&self, a: &Matrix) -> Result<Self> {
        let image = a.apply(&self.0);
        let n = norm2(&image);
        if n == 0.0 {
            return Err(Error::ZeroVector);
        }
        Ok(Self(image.into_iter().map(|c| c / n).collect()))
    }
}

pub fn normalize(x: &ConeVector) -> Result<UnitDirection> {
    let n = x.norm();
    if n == 0.0 {
        return Err(Error::ZeroVector);
    }
    Ok(UnitDirection(x.0.iter().map(|c| c / n).collect()))
}

pub fn in_interior(x: &ConeVector) -> bool {
    x.0.iter().all(|&c| c > 0.0)
}

/// Hilbert projective metric on the orthant,
/// `log(maxᵢ xᵢ/yᵢ · maxⱼ yⱼ/xⱼ)`; `+∞` when a coordinate vanishes in exactly
/// one argument.
///
/// Only ratios enter, so the value does not depend on how either argument is
/// scaled.
pub fn birkhoff_distance(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    let mut max_xy = 0.0_f64;
    let mut max_yx = 0.0_f64;
    for (&a, &b) in x.iter().zip(y) {
        match (a > 0.0, b > 0.0) {
            (true, true) => {
                max_xy = max_xy.max(a / b);
                max_yx = max_yx.max(b / a);
            }
            (false, false) => {}
            _ => return f64::INFINITY,
        }
    }
    if max_xy == 0.0 {
        // both vectors zero
        return 0.0;
    }
    (max_xy * max_yx).ln().max(0.0)
}

/// Monte Carlo lower estimate of `τ(x) = inf |ax|/|a|` over products of up
/// to `max_len` atoms.
///
/// The estimate is the minimum over every atom plus `samples` random
/// products; it can only overestimate the infimum, so it is a diagnostic.
pub fn tau_lower_bound<R: Rng + ?Sized>(
    x: &ConeVector,
    ensemble: &Ensemble,
    samples: usize,
    max_len: usize,
    rng: &mut R,
) -> Result<f64> {
    if x.dim() != ensemble.dim() {
        return Err(Error::DimensionMismatch {
            expected: ensemble.dim(),
            got: x.dim(),
        });
    }
    if !in_interior(x) {
        return Err(Error::InteriorRequired);
    }
    let ratio = |a: &Matrix| norm2(&a.apply(x.coords())) / a.operator_norm();
    let mut best = ensemble
        .atoms()
        .iter()
        .map(|atom| ratio(atom.matrix()))
        .fold(f64::INFINITY, f64::min);
    let max_len = max_len.max(1);
    for _ in 0..samples {
        let len = rng.random_range(1..=max_len);
        let mut product = ensemble.sample(rng).clone();
        for _ in 1..len {
            product = ensemble.sample(rng).mul(&product);
            let scale = product.max_abs();
            product = product.scale(1.0 / scale);
        }
        best = best.min(ratio(&product));
    }
    Ok(best)
}
