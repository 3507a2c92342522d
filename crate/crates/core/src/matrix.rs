//! Small dense square matrices.
//!
//! Every matrix in this crate is at most 6×6, so a row-major `Vec<f64>` with
//! hand-written products is faster than going through a general linear
//! algebra crate in the simulation hot loops. Singular values and ranks are
//! delegated to `nalgebra`.

use nalgebra::DMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    dim: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), dim * dim, "matrix data length must be dim²");
        Self { dim, data }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let dim = rows.len();
        let mut data = Vec::with_capacity(dim * dim);
        for row in rows {
            assert_eq!(row.len(), dim, "matrix must be square");
            data.extend_from_slice(row);
        }
        Self { dim, data }
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![0.0; dim * dim];
        for i in 0..dim {
            data[i * dim + i] = 1.0;
        }
        Self { dim, data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.dim + j] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for j in 0..d {
                out.data[j * d + i] = self.data[i * d + j];
            }
        }
        out
    }

    pub fn scale(&self, t: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|x| x * t).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &Matrix, t: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += t * b;
        }
    }

    /// `self · other`.
    pub fn mul(&self, other: &Matrix) -> Self {
        let d = self.dim;
        let mut out = Self::zeros(d);
        for i in 0..d {
            for k in 0..d {
                let a = self.data[i * d + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..d {
                    out.data[i * d + j] += a * other.data[k * d + j];
                }
            }
        }
        out
    }

    /// Writes `self · x` into `out`.
    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.data[i * d..(i + 1) * d];
            *o = row.iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// Adds `self · x` to `out`.
    #[inline]
    pub fn apply_add(&self, x: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate().take(d) {
            let row = &self.data[i * d..(i + 1) * d];
            *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.apply_into(x, &mut out);
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.data.iter().all(|&x| x > 0.0)
    }

    /// Index of the first column whose entries are all zero.
    pub fn zero_column(&self) -> Option<usize> {
        (0..self.dim).find(|&j| (0..self.dim).all(|i| self.get(i, j) == 0.0))
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.data)
    }

    /// Induced Euclidean operator norm (largest singular value).
    pub fn operator_norm(&self) -> f64 {
        if self.dim == 2 {
            // closed form: σ_max² = (F + √(F² − 4 det²)) / 2, F = Frobenius²
            let (a, b, c, d) = (self.data[0], self.data[1], self.data[2], self.data[3]);
            let f = a * a + b * b + c * c + d * d;
            let det = a * d - b * c;
            let disc = (f * f - 4.0 * det * det).max(0.0);
            return ((f + disc.sqrt()) / 2.0).sqrt();
        }
        self.to_nalgebra()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max)
    }

    pub fn determinant(&self) -> f64 {
        self.to_nalgebra().determinant()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Dominant eigenpair of a nonnegative matrix by power iteration from the
/// all-ones vector.
///
/// Iterates until successive Rayleigh quotients differ by less than
/// `tol·max(1, λ)` and the residual `|a v − λ v|∞` is below `10·tol·λ`.
/// Returns `(λ, v, iterations)` with `|v| = 1`; `Err` carries the
/// last residual when `max_iter` is reached.
pub(crate) fn power_iteration(
    a: &Matrix,
    tol: f64,
    max_iter: usize,
) -> std::result::Result<(f64, Vec<f64>, usize), (usize, f64)> {
    let d = a.dim();
    let inv = 1.0 / (d as f64).sqrt();
    let mut v = vec![inv; d];
    let mut w = vec![0.0; d];
    let mut last = f64::NAN;
    let mut residual = f64::INFINITY;
    for it in 1..=max_iter {
        a.apply_into(&v, &mut w);
        let lambda = dot(&v, &w);
        residual = v
            .iter()
            .zip(&w)
            .map(|(x, y)| (y - lambda * x).abs())
            .fold(0.0, f64::max);
        let n = norm2(&w);
        if n == 0.0 || !n.is_finite() {
            return Err((it, residual));
        }
        let scale = lambda.abs().max(1.0);
        if (lambda - last).abs() < tol * scale && residual <= 10.0 * tol * scale {
            return Ok((lambda, v, it));
        }
        last = lambda;
        for (x, y) in v.iter_mut().zip(&w) {
            *x = y / n;
        }
    }
    Err((max_iter, residual))
}

/// Numerical rank of the matrix whose columns are `vectors`.
pub(crate) fn column_rank(vectors: &[Vec<f64>], rel_tol: f64) -> usize {
    if vectors.is_empty() {
        return 0;
    }
    let d = vectors[0].len();
    let m = DMatrix::from_fn(d, vectors.len(), |i, j| vectors[j][i]);
    let sv = m.singular_values();
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn operator_norm_matches_svd_in_dimension_two() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.5, 3.0]]);
        let svd = a
            .to_nalgebra()
            .singular_values()
            .iter()
            .copied()
            .fold(0.0, f64::max);
        assert!((a.operator_norm() - svd).abs() < 1e-12);
    }

    #[test]
    fn symmetric_positive_norm_is_spectral_radius() {
        let a = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 2.0]]);
        let r = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((a.operator_norm() - r).abs() < 1e-12);
    }

    #[test]
    fn zero_column_detected() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, 2.0]]);
        assert_eq!(a.zero_column(), Some(0));
        assert_eq!(Matrix::identity(3).zero_column(), None);
    }

    #[test]
    fn rank_of_collinear_columns() {
        let v = vec![vec![1.0, 2.0], vec![2.0, 4.0]];
        assert_eq!(column_rank(&v, 1e-8), 1);
        let w = vec![vec![1.0, 0.0], vec![1.0, 1.0]];
        assert_eq!(column_rank(&w, 1e-8), 2);
    }
}
