//! Collocation matrix of the transfer operator
//! `P^s ψ(x) = Σₖ pₖ |aₖx|^s ψ(aₖ·x)`.
//!
//! The operator is discretized acting on the degree-`s` homogeneous lift
//! `φ(y) = |y|^s ψ(y/|y|)` restricted to the simplex. On the simplex the
//! growth factor of `aₖ` at `y` is `Σ(aₖy)` and the image direction is
//! `aₖy / Σ(aₖy)`; both are conjugate to the Euclidean form, so the spectrum
//! is the same while linear eigenfunctions (the `s = 1` case) are
//! represented exactly by barycentric interpolation.

use rayon::prelude::*;

use super::grid::{DirectionGrid, Stencil};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::matrix::norm2;

/// Image of one grid point under one atom.
#[derive(Debug, Clone)]
pub struct Transition {
    /// `Σ(aₖ y)` for simplex coordinates `y`.
    pub growth: f64,
    /// `log|aₖ x|` with `x` the Euclidean unit direction.
    pub log_euclidean: f64,
    pub stencil: Stencil,
}

/// Sparse `G×G` nonnegative matrix `T_s` together with the per-atom
/// transitions it was built from.
#[derive(Debug, Clone)]
pub struct TransferOperator {
    pub s: f64,
    weights: Vec<f64>,
    /// `transitions[j * K + k]`
    transitions: Vec<Transition>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    n: usize,
}

impl TransferOperator {
    pub fn assemble(ensemble: &Ensemble, s: f64, grid: &DirectionGrid) -> Result<Self> {
        if ensemble.dim() != grid.dim() {
            return Err(Error::DimensionMismatch {
                expected: grid.dim(),
                got: ensemble.dim(),
            });
        }
        let atoms = ensemble.atoms();
        let k_atoms = atoms.len();
        let d = grid.dim();
        let rows: Vec<Result<(Vec<Transition>, Vec<(usize, f64)>)>> = (0..grid.len())
            .into_par_iter()
            .map(|j| {
                let y = grid.simplex_point(j);
                let x = grid.point(j);
                let mut image = vec![0.0; d];
                let mut transitions = Vec::with_capacity(k_atoms);
                let mut entries: Vec<(usize, f64)> = Vec::with_capacity(k_atoms * d);
                for (k, atom) in atoms.iter().enumerate() {
                    atom.matrix().apply_into(y, &mut image);
                    let growth: f64 = image.iter().sum();
                    if !(growth > 0.0) {
                        return Err(Error::ZeroImage { atom: k, point: j });
                    }
                    let stencil = grid.interpolate(&image);
                    let base = atom.weight() * growth.powf(s);
                    entries.extend(stencil.iter().map(|&(i, l)| (i, base * l)));
                    let log_euclidean = norm2(&atom.matrix().apply(x)).ln();
                    transitions.push(Transition {
                        growth,
                        log_euclidean,
                        stencil,
                    });
                }
                entries.sort_by_key(|e| e.0);
                let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
                for (i, v) in entries {
                    match merged.last_mut() {
                        Some(last) if last.0 == i => last.1 += v,
                        _ => merged.push((i, v)),
                    }
                }
                Ok((transitions, merged))
            })
            .collect();

        let mut transitions = Vec::with_capacity(grid.len() * k_atoms);
        let mut row_ptr = Vec::with_capacity(grid.len() + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in rows {
            let (t, entries) = row?;
            transitions.extend(t);
            for (i, v) in entries {
                cols.push(i);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            s,
            weights: atoms.iter().map(|a| a.weight()).collect(),
            transitions,
            row_ptr,
            cols,
            vals,
            n: grid.len(),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn atom_count(&self) -> usize {
        self.weights.len()
    }

    pub fn atom_weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    pub fn transition(&self, j: usize, k: usize) -> &Transition {
        &self.transitions[j * self.weights.len() + k]
    }

    /// Entry `(i, j)`; linear scan of row `i`, for tests.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        (self.row_ptr[i]..self.row_ptr[i + 1])
            .find(|&p| self.cols[p] == j)
            .map_or(0.0, |p| self.vals[p])
    }

    /// `out = T v`.
    pub fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.par_iter_mut().enumerate().for_each(|(i, o)| {
            *o = (self.row_ptr[i]..self.row_ptr[i + 1])
                .map(|p| self.vals[p] * v[self.cols[p]])
                .sum();
        });
    }

    /// `out = Tᵀ v` (row vector times matrix). Sequential so that the
    /// accumulation order is fixed.
    pub fn apply_transpose(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for i in 0..self.n {
            let vi = v[i];
            if vi == 0.0 {
                continue;
            }
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                out[self.cols[p]] += vi * self.vals[p];
            }
        }
    }

    /// Interpolated value of the grid function `f` at the image of grid
    /// point `j` under atom `k`.
    #[inline]
    pub fn image_value(&self, f: &[f64], j: usize, k: usize) -> f64 {
        self.transition(j, k).stencil.iter().map(|&(i, l)| l * f[i]).sum()
    }
}
