//! Discretization of the unit slice `C₁`.
//!
//! Grid points are stored twice: as Euclidean unit directions (the
//! reporting normalization) and as points of the standard simplex
//! `{y ≥ 0, Σy = 1}` (the chart used for interpolation). Any nonzero
//! `w ∈ C` is located through its simplex coordinates `w / Σw`, and the
//! interpolation stencil is a convex combination of at most `d` grid points.
//!
//! * `d = 2`: `R + 1` points uniform in angle on the quarter circle,
//!   interpolated linearly in the simplex coordinate `y₂`.
//! * `d ≥ 3`: the simplex lattice `{z ∈ ℕ^d : Σz = R}/R` (there are
//!   `C(R+d−1, d−1)` points), interpolated barycentrically on the Kuhn
//!   triangulation of the lattice.

use std::collections::HashMap;

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::matrix::norm2;

pub const MAX_DIM: usize = 6;

/// Convex interpolation weights: `(grid index, weight)`.
pub type Stencil = SmallVec<[(usize, f64); MAX_DIM]>;

#[derive(Debug, Clone)]
enum Layout {
    Angular { chart: Vec<f64> },
    Lattice { index: HashMap<Vec<u32>, usize> },
}

#[derive(Debug, Clone)]
pub struct DirectionGrid {
    dim: usize,
    resolution: usize,
    unit: Vec<f64>,
    simplex: Vec<f64>,
    layout: Layout,
}

fn lattice_points(d: usize, r: u32) -> Vec<Vec<u32>> {
    fn rec(d: usize, remaining: u32, prefix: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if prefix.len() == d - 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=remaining).rev() {
            prefix.push(k);
            rec(d, remaining - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(d, r, &mut Vec::with_capacity(d), &mut out);
    out
}

impl DirectionGrid {
    pub fn build(dim: usize, resolution: usize) -> Result<Self> {
        if !(2..=MAX_DIM).contains(&dim) {
            return Err(Error::DimensionUnsupported(dim));
        }
        if resolution == 0 {
            return Err(Error::ResolutionTooSmall(resolution));
        }
        let mut unit = Vec::new();
        let mut simplex = Vec::new();
        let layout = if dim == 2 {
            let mut chart = Vec::with_capacity(resolution + 1);
            for j in 0..=resolution {
                let theta = std::f64::consts::FRAC_PI_2 * j as f64 / resolution as f64;
                let (x, y) = if j == 0 {
                    (1.0, 0.0)
                } else if j == resolution {
                    (0.0, 1.0)
                } else {
                    (theta.cos(), theta.sin())
                };
                unit.extend_from_slice(&[x, y]);
                let total = x + y;
                simplex.extend_from_slice(&[x / total, y / total]);
                chart.push(y / total);
            }
            Layout::Angular { chart }
        } else {
            let r = u32::try_from(resolution).map_err(|_| Error::ResolutionTooSmall(resolution))?;
            let points = lattice_points(dim, r);
            let mut index = HashMap::with_capacity(points.len());
            for (j, z) in points.into_iter().enumerate() {
                let y: Vec<f64> = z.iter().map(|&c| f64::from(c) / f64::from(r)).collect();
                let n = norm2(&y);
                unit.extend(y.iter().map(|c| c / n));
                simplex.extend_from_slice(&y);
                index.insert(z, j);
            }
            Layout::Lattice { index }
        };
        Ok(Self {
            dim,
            resolution,
            unit,
            simplex,
            layout,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.unit.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.unit.is_empty()
    }

    /// Euclidean unit direction of grid point `j`.
    pub fn point(&self, j: usize) -> &[f64] {
        &self.unit[j * self.dim..(j + 1) * self.dim]
    }

    /// Simplex coordinates of grid point `j`.
    pub fn simplex_point(&self, j: usize) -> &[f64] {
        &self.simplex[j * self.dim..(j + 1) * self.dim]
    }

    pub fn directions(&self) -> impl Iterator<Item = &[f64]> {
        self.unit.chunks(self.dim)
    }

    /// Stencil for the direction of a nonzero `w ∈ C`.
    pub fn interpolate(&self, w: &[f64]) -> Stencil {
        let total: f64 = w.iter().sum();
        debug_assert!(total > 0.0, "interpolation of the zero vector");
        match &self.layout {
            Layout::Angular { chart } => {
                let t = (w[1] / total).clamp(0.0, 1.0);
                let hi = chart.partition_point(|&c| c < t);
                let mut st = Stencil::new();
                if hi == 0 {
                    st.push((0, 1.0));
                } else if hi >= chart.len() {
                    st.push((chart.len() - 1, 1.0));
                } else if chart[hi] == t {
                    st.push((hi, 1.0));
                } else {
                    let lo = hi - 1;
                    let lam = (t - chart[lo]) / (chart[hi] - chart[lo]);
                    st.push((lo, 1.0 - lam));
                    st.push((hi, lam));
                }
                st
            }
            Layout::Lattice { index } => self.kuhn_stencil(w, total, index),
        }
    }

    fn kuhn_stencil(&self, w: &[f64], total: f64, index: &HashMap<Vec<u32>, usize>) -> Stencil {
        let d = self.dim;
        let r = self.resolution as f64;
        // cumulative coordinates turn the simplex into the order cone
        // 0 ≤ c₁ ≤ … ≤ c_{d−1} ≤ R, a union of Kuhn simplices
        let mut cum = [0.0; MAX_DIM];
        let mut acc = 0.0;
        for k in 0..d - 1 {
            acc += w[k] / total * r;
            let prev = if k == 0 { 0.0 } else { cum[k - 1] };
            let c = acc.clamp(0.0, r).max(prev);
            // snap rounding noise so lattice points map to themselves
            cum[k] = if (c - c.round()).abs() < 1e-12 * r { c.round() } else { c };
        }
        let mut base = [0i64; MAX_DIM];
        let mut frac = [0.0; MAX_DIM];
        for k in 0..d - 1 {
            let f = cum[k].floor();
            base[k] = f as i64;
            frac[k] = cum[k] - f;
        }
        let mut order: SmallVec<[usize; MAX_DIM]> = (0..d - 1).collect();
        order.sort_by(|&a, &b| frac[b].total_cmp(&frac[a]).then(b.cmp(&a)));

        let mut st = Stencil::new();
        let mut vertex = base;
        let push = |vertex: &[i64; MAX_DIM], weight: f64, st: &mut Stencil| {
            if weight <= 0.0 {
                return;
            }
            let mut z = vec![0u32; d];
            let mut prev = 0i64;
            for k in 0..d - 1 {
                z[k] = (vertex[k] - prev) as u32;
                prev = vertex[k];
            }
            z[d - 1] = (self.resolution as i64 - prev) as u32;
            let j = *index.get(&z).expect("Kuhn vertex lies on the simplex lattice");
            st.push((j, weight));
        };
        let first = if d > 1 { frac[order[0]] } else { 0.0 };
        push(&vertex, 1.0 - first, &mut st);
        for (pos, &k) in order.iter().enumerate() {
            vertex[k] += 1;
            let next = order.get(pos + 1).map_or(0.0, |&n| frac[n]);
            push(&vertex, frac[k] - next, &mut st);
        }
        st
    }

    /// Largest Euclidean distance between neighboring grid directions.
    pub fn mesh(&self) -> f64 {
        match &self.layout {
            Layout::Angular { .. } => (0..self.len() - 1)
                .map(|j| {
                    let a = self.point(j);
                    let b = self.point(j + 1);
                    norm2(&[a[0] - b[0], a[1] - b[1]])
                })
                .fold(0.0, f64::max),
            Layout::Lattice { index } => {
                let d = self.dim;
                let mut h = 0.0_f64;
                for (z, &j) in index {
                    for a in 0..d {
                        for b in 0..d {
                            if a == b || z[b] == 0 {
                                continue;
                            }
                            let mut n = z.clone();
                            n[a] += 1;
                            n[b] -= 1;
                            if let Some(&i) = index.get(&n) {
                                let diff: Vec<f64> =
                                    self.point(j).iter().zip(self.point(i)).map(|(p, q)| p - q).collect();
                                h = h.max(norm2(&diff));
                            }
                        }
                    }
                }
                h
            }
        }
    }
}
