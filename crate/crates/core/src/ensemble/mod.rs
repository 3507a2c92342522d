//! Finitely supported laws of cone-preserving matrices, together with the
//! branching law of the cascade.
//!
//! Every expectation over the matrix law is a finite weighted sum over
//! [`Atom`]s.

mod condition;
mod model;
mod moments;

pub use condition::{check_condition_c, lattice_diagnostic, ConditionReport, LatticeReport, LatticeVerdict};
pub use model::{load_model, parse_model, ModelFile};
pub use moments::{hypothesis_moments, HypothesisMoments};

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::cone::UnitDirection;
use crate::error::{Error, Result};
use crate::matrix::{power_iteration, Matrix};

/// Tolerance on the total weight of a law.
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

/// One support point of the matrix law: a nonnegative matrix with no zero
/// column (so `Ker a ∩ C = {0}`) and its probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    weight: f64,
    matrix: Matrix,
}

impl Atom {
    pub fn new(weight: f64, matrix: Matrix) -> Result<Self> {
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidModel {
                path: "weight".into(),
                message: format!("must lie in (0, 1], got {weight}"),
            });
        }
        if let Some((idx, x)) = matrix
            .as_slice()
            .iter()
            .enumerate()
            .find(|(_, x)| !(**x >= 0.0) || !x.is_finite())
        {
            let d = matrix.dim();
            return Err(Error::InvalidModel {
                path: format!("matrix[{}][{}]", idx / d, idx % d),
                message: format!("must be finite and nonnegative, got {x}"),
            });
        }
        if let Some(col) = matrix.zero_column() {
            return Err(Error::InvalidModel {
                path: "matrix".into(),
                message: format!("column {col} is zero"),
            });
        }
        Ok(Self { weight, matrix })
    }

    pub fn weight(&self) -> f64 {
        self.weight
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }
}

/// Law of the number of children of a vertex. Support starts at 2.
#[derive(Debug, Clone, PartialEq)]
pub enum BranchingLaw {
    Constant(u32),
    /// `(n, P[N = n])` pairs, increasing in `n`.
    Finite(Vec<(u32, f64)>),
}

impl BranchingLaw {
    pub fn constant(c: u32) -> Result<Self> {
        let law = Self::Constant(c);
        law.validate()?;
        Ok(law)
    }

    pub fn finite(mut pmf: Vec<(u32, f64)>) -> Result<Self> {
        pmf.sort_by_key(|&(n, _)| n);
        let law = Self::Finite(pmf);
        law.validate()?;
        Ok(law)
    }

    fn validate(&self) -> Result<()> {
        let bad = |message: String| Error::InvalidModel {
            path: "branching".into(),
            message,
        };
        match self {
            Self::Constant(c) if *c < 2 => Err(bad(format!("constant must be at least 2, got {c}"))),
            Self::Constant(_) => Ok(()),
            Self::Finite(pmf) => {
                if pmf.is_empty() {
                    return Err(bad("pmf is empty".into()));
                }
                for &(n, p) in pmf {
                    if n < 2 {
                        return Err(bad(format!("support must start at 2, found {n}")));
                    }
                    if !(p >= 0.0 && p <= 1.0) {
                        return Err(bad(format!("P[N = {n}] = {p} is not a probability")));
                    }
                }
                let total: f64 = pmf.iter().map(|&(_, p)| p).sum();
                if (total - 1.0).abs() > WEIGHT_SUM_TOL {
                    return Err(bad(format!("pmf sums to {total}")));
                }
                Ok(())
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Constant(c) => f64::from(*c),
            Self::Finite(pmf) => pmf.iter().map(|&(n, p)| f64::from(n) * p).sum(),
        }
    }

    /// `E[N(N−1)]`.
    pub fn factorial_moment(&self) -> f64 {
        match self {
            Self::Constant(c) => f64::from(*c) * f64::from(c - 1),
            Self::Finite(pmf) => pmf
                .iter()
                .map(|&(n, p)| f64::from(n) * f64::from(n - 1) * p)
                .sum(),
        }
    }

    pub fn max(&self) -> u32 {
        match self {
            Self::Constant(c) => *c,
            Self::Finite(pmf) => pmf.iter().map(|&(n, _)| n).max().unwrap_or(2),
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            Self::Constant(_) => true,
            Self::Finite(pmf) => pmf.iter().filter(|&&(_, p)| p > 0.0).count() == 1,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match self {
            Self::Constant(c) => *c,
            Self::Finite(pmf) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for &(n, p) in pmf {
                    acc += p;
                    if u < acc {
                        return n;
                    }
                }
                pmf.last().map(|&(n, _)| n).unwrap_or(2)
            }
        }
    }
}

/// Dominant eigen-data of the mean matrix `m = E[A]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PerronData {
    pub mean_matrix: Matrix,
    /// Spectral radius `r(m)`.
    pub radius: f64,
    /// Right eigenvector `v` (`m v = r v`).
    pub right: UnitDirection,
    /// Left eigenvector `v*` (`mᵀ v* = r v*`).
    pub left: UnitDirection,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    dim: usize,
    atoms: Vec<Atom>,
    branching: BranchingLaw,
    cumulative: Vec<f64>,
}

impl Ensemble {
    pub fn new(dim: usize, atoms: Vec<Atom>, branching: BranchingLaw) -> Result<Self> {
        if dim < 2 {
            return Err(Error::InvalidModel {
                path: "dimension".into(),
                message: format!("must be at least 2, got {dim}"),
            });
        }
        if atoms.is_empty() {
            return Err(Error::InvalidModel {
                path: "atoms".into(),
                message: "at least one atom is required".into(),
            });
        }
        for (i, atom) in atoms.iter().enumerate() {
            if atom.matrix.dim() != dim {
                return Err(Error::InvalidModel {
                    path: format!("atoms[{i}].matrix"),
                    message: format!("is {0}×{0}, expected {dim}×{dim}", atom.matrix.dim()),
                });
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if (total - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidModel {
                path: "atoms".into(),
                message: format!("weights sum to {total}, expected 1"),
            });
        }
        let mut acc = 0.0;
        let cumulative = atoms
            .iter()
            .map(|a| {
                acc += a.weight;
                acc
            })
            .collect();
        Ok(Self {
            dim,
            atoms,
            branching,
            cumulative,
        })
    }

    /// Convenience constructor from `(weight, rows)` pairs.
    pub fn from_weighted_rows(
        atoms: &[(f64, Vec<Vec<f64>>)],
        branching: BranchingLaw,
    ) -> Result<Self> {
        let dim = atoms.first().map_or(0, |(_, rows)| rows.len());
        let atoms = atoms
            .iter()
            .enumerate()
            .map(|(i, (w, rows))| {
                Atom::new(*w, Matrix::from_rows(rows)).map_err(|e| prefix_path(e, &format!("atoms[{i}]")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dim, atoms, branching)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn branching(&self) -> &BranchingLaw {
        &self.branching
    }

    pub fn with_branching(&self, branching: BranchingLaw) -> Self {
        Self {
            branching,
            ..self.clone()
        }
    }

    /// Index of an atom drawn by inverse CDF.
    #[inline]
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let idx = self.cumulative.partition_point(|&c| c <= u);
        idx.min(self.atoms.len() - 1)
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &Matrix {
        &self.atoms[self.sample_index(rng)].matrix
    }

    pub fn mean_matrix(&self) -> Matrix {
        let mut m = Matrix::zeros(self.dim);
        for atom in &self.atoms {
            m.add_scaled(&atom.matrix, atom.weight);
        }
        m
    }

    /// Every atom multiplied by `t > 0`.
    pub fn scaled(&self, t: f64) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                weight: a.weight,
                matrix: a.matrix.scale(t),
            })
            .collect();
        Self {
            atoms,
            ..self.clone()
        }
    }

    /// The law of `Aᵀ`.
    pub fn transposed(&self) -> Self {
        let atoms = self
            .atoms
            .iter()
            .map(|a| Atom {
                weight: a.weight,
                matrix: a.matrix.transpose(),
            })
            .collect();
        Self {
            atoms,
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical model serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        let json = serde_json::to_vec(&ModelFile::from_ensemble(self)).expect("model serializes");
        hex::encode(Sha256::digest(&json))
    }

    pub fn mean_and_perron(&self) -> Result<PerronData> {
        mean_and_perron(self)
    }

    /// `r(m)·E[N]`.
    pub fn calibration_product(&self) -> Result<f64> {
        Ok(self.mean_and_perron()?.radius * self.branching.mean())
    }
}

fn prefix_path(err: Error, prefix: &str) -> Error {
    match err {
        Error::InvalidModel { path, message } => Error::InvalidModel {
            path: format!("{prefix}.{path}"),
            message,
        },
        other => other,
    }
}

/// Stopping tolerance on successive Rayleigh quotients.
pub const PERRON_TOL: f64 = 1e-12;
pub const PERRON_MAX_ITER: usize = 100_000;

/// Mean matrix and its Perron data.
///
/// Power iteration runs on `m + εI` with `ε = 1e-12·tr(m)` so that ties
/// between dominant eigenvalues (reducible or defective `m`, identity atoms)
/// still terminate; the shift is removed from the reported radius.
pub fn mean_and_perron(ensemble: &Ensemble) -> Result<PerronData> {
    let m = ensemble.mean_matrix();
    let eps = 1e-12 * m.trace();
    let mut shifted = m.clone();
    shifted.add_scaled(&Matrix::identity(ensemble.dim()), eps);
    let no_conv = |(iterations, residual)| Error::NoConvergence {
        iterations,
        residual,
    };
    let (lambda, right, it_r) = power_iteration(&shifted, PERRON_TOL, PERRON_MAX_ITER).map_err(no_conv)?;
    let (_, left, it_l) =
        power_iteration(&shifted.transpose(), PERRON_TOL, PERRON_MAX_ITER).map_err(no_conv)?;
    let clip = |v: Vec<f64>| -> Result<UnitDirection> {
        // power iteration from a positive start keeps iterates nonnegative;
        // only rounding can produce a -0.0
        UnitDirection::from_coords(&v.into_iter().map(|c| c.max(0.0)).collect::<Vec<_>>())
    };
    Ok(PerronData {
        mean_matrix: m,
        radius: lambda - eps,
        right: clip(right)?,
        left: clip(left)?,
        iterations: it_r.max(it_l),
    })
}

/// Scales every atom by `t = 1/(E[N]·r(m))` so that `r(m)·E[N] = 1`.
/// Returns the rescaled ensemble and `t`.
pub fn calibrate(ensemble: &Ensemble) -> Result<(Ensemble, f64)> {
    let r = ensemble.mean_and_perron()?.radius;
    let t = 1.0 / (ensemble.branching.mean() * r);
    let scaled = ensemble.scaled(t);
    let check = scaled.calibration_product()?;
    debug_assert!((check - 1.0).abs() <= 1e-10, "calibration residual {check}");
    Ok((scaled, t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamSeed;

    fn a0() -> Vec<Vec<f64>> {
        vec![vec![1.0, 1.0], vec![1.0, 2.0]]
    }

    fn scaled_rows(w: f64, rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter().map(|r| r.iter().map(|x| x * w).collect()).collect()
    }

    pub(crate) fn oracle() -> Ensemble {
        Ensemble::from_weighted_rows(
            &[(0.8, scaled_rows(0.5, &a0())), (0.2, scaled_rows(4.0, &a0()))],
            BranchingLaw::Constant(2),
        )
        .unwrap()
    }

    #[test]
    fn zero_column_rejected_with_path() {
        let err = Ensemble::from_weighted_rows(
            &[
                (0.5, vec![vec![1.0, 0.0], vec![0.0, 1.0]]),
                (0.5, vec![vec![0.0, 1.0], vec![0.0, 1.0]]),
            ],
            BranchingLaw::Constant(2),
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "invalid model: atoms[1].matrix column 0 is zero");
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = Ensemble::from_weighted_rows(
            &[(0.5, a0()), (0.4, a0())],
            BranchingLaw::Constant(2),
        )
        .unwrap_err();
        assert!(err.to_string().contains("weights sum"));
    }

    #[test]
    fn branching_support_starts_at_two() {
        assert!(BranchingLaw::constant(1).is_err());
        assert!(BranchingLaw::finite(vec![(1, 0.5), (3, 0.5)]).is_err());
        let law = BranchingLaw::finite(vec![(3, 0.25), (2, 0.75)]).unwrap();
        assert!((law.mean() - 2.25).abs() < 1e-15);
        assert!(!law.is_constant());
    }

    #[test]
    fn single_atom_always_sampled() {
        let e = Ensemble::from_weighted_rows(&[(1.0, a0())], BranchingLaw::Constant(2)).unwrap();
        let mut rng = StreamSeed::new(1).rng();
        for _ in 0..100 {
            assert_eq!(e.sample_index(&mut rng), 0);
        }
    }

    #[test]
    fn two_atom_frequencies() {
        let e = Ensemble::from_weighted_rows(
            &[(0.8, a0()), (0.2, scaled_rows(2.0, &a0()))],
            BranchingLaw::Constant(2),
        )
        .unwrap();
        let mut rng = StreamSeed::new(7).rng();
        let n = 100_000;
        let hits = (0..n).filter(|_| e.sample_index(&mut rng) == 0).count();
        let freq = hits as f64 / n as f64;
        // 3σ of a binomial proportion: 3·√(0.8·0.2/10⁵) ≈ 0.0038
        assert!((freq - 0.8).abs() <= 0.004, "freq {freq}");
    }

    #[test]
    fn perron_of_symmetric_circulant() {
        let e = Ensemble::from_weighted_rows(
            &[(1.0, vec![vec![2.0, 1.0], vec![1.0, 2.0]])],
            BranchingLaw::Constant(2),
        )
        .unwrap();
        let p = e.mean_and_perron().unwrap();
        assert!((p.radius - 3.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for c in p.right.coords().iter().chain(p.left.coords()) {
            assert!((c - h).abs() < 1e-10);
        }
    }

    #[test]
    fn perron_of_scalar_family() {
        let p = oracle().mean_and_perron().unwrap();
        let r0 = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((p.radius - 1.2 * r0).abs() < 1e-10 * r0);
    }

    #[test]
    fn perron_of_identity_terminates() {
        let e = Ensemble::from_weighted_rows(
            &[(1.0, vec![vec![1.0, 0.0], vec![0.0, 1.0]])],
            BranchingLaw::Constant(2),
        )
        .unwrap();
        let p = e.mean_and_perron().unwrap();
        assert!((p.radius - 1.0).abs() < 1e-12);
    }

    #[test]
    fn perron_residuals() {
        let e = Ensemble::from_weighted_rows(
            &[
                (0.3, vec![vec![0.2, 1.5, 0.1], vec![0.7, 0.0, 0.4], vec![0.1, 0.3, 0.9]]),
                (0.7, vec![vec![1.1, 0.0, 0.2], vec![0.0, 0.5, 0.6], vec![0.8, 0.2, 0.0]]),
            ],
            BranchingLaw::Constant(2),
        )
        .unwrap();
        let p = e.mean_and_perron().unwrap();
        let mv = p.mean_matrix.apply(p.right.coords());
        let mtv = p.mean_matrix.transpose().apply(p.left.coords());
        for i in 0..3 {
            assert!((mv[i] - p.radius * p.right.coords()[i]).abs() <= 1e-8 * p.radius);
            assert!((mtv[i] - p.radius * p.left.coords()[i]).abs() <= 1e-8 * p.radius);
        }
        assert!(p.right.coords().iter().all(|&c| c > 0.0));
    }

    #[test]
    fn radius_is_homogeneous() {
        let e = oracle();
        let r = e.mean_and_perron().unwrap().radius;
        for t in [0.1, 3.7, 1e3] {
            let rt = e.scaled(t).mean_and_perron().unwrap().radius;
            assert!((rt - t * r).abs() <= 1e-12 * t * r);
        }
    }

    #[test]
    fn calibration_examples() {
        let e = Ensemble::from_weighted_rows(
            &[(1.0, vec![vec![2.0, 1.0], vec![1.0, 2.0]])],
            BranchingLaw::Constant(2),
        )
        .unwrap();
        let (c, t) = calibrate(&e).unwrap();
        assert!((t - 1.0 / 6.0).abs() < 1e-12);
        assert!((c.mean_and_perron().unwrap().radius - 0.5).abs() < 1e-12);
        let (again, t2) = calibrate(&c).unwrap();
        assert!((t2 - 1.0).abs() < 1e-12);
        assert!((again.calibration_product().unwrap() - 1.0).abs() < 1e-10);

        let (oc, to) = calibrate(&oracle()).unwrap();
        let r0 = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((to - 1.0 / (2.0 * 1.2 * r0)).abs() < 1e-12);
        // 1/(2·1.2·r₀) = 0.1591521…
        assert!((to - 0.159_152).abs() < 1e-6);
        assert!((oc.calibration_product().unwrap() - 1.0).abs() < 1e-10);
    }

    proptest::proptest! {
        #[test]
        fn zero_column_masks_rejected(
            entries in proptest::collection::vec(0.1f64..2.0, 9),
            mask in proptest::collection::vec(proptest::bool::ANY, 9),
        ) {
            let data: Vec<f64> = entries.iter().zip(&mask).map(|(x, keep)| if *keep { *x } else { 0.0 }).collect();
            let m = Matrix::from_row_major(3, data.clone());
            let has_zero_col = (0..3).any(|j| (0..3).all(|i| data[i * 3 + j] == 0.0));
            proptest::prop_assert_eq!(Atom::new(1.0, m).is_err(), has_zero_col);
        }
    }
}
