//! Integrability hypotheses of the tail theorem, evaluated over the atoms.

use serde::Serialize;

use super::Ensemble;
use crate::matrix::norm2;
use crate::spectral::DirectionGrid;

/// Resolution of the direction grid on which `ι(a) = min |ax|` is searched.
pub const IOTA_GRID_RESOLUTION: usize = 64;
/// `|det a|` at or below this counts as singular.
pub const SINGULAR_DET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisMoments {
    pub s: f64,
    /// `E|A|^s`
    pub norm_moment: f64,
    /// `E[|A|^s |log|A||]`
    pub norm_log_moment: f64,
    /// `E[|A|^s |log ι(A)|]`, with `ι` minimized over a direction grid.
    pub iota_log_moment: f64,
    pub iota: Vec<f64>,
    pub iota_is_grid_approximation: bool,
    /// Finite support makes every moment finite; recorded for the report.
    pub all_finite: bool,
    pub all_invertible: bool,
    pub warnings: Vec<String>,
}

pub fn hypothesis_moments(ensemble: &Ensemble, s: f64) -> HypothesisMoments {
    let grid = DirectionGrid::build(ensemble.dim(), IOTA_GRID_RESOLUTION)
        .expect("dimension validated by ensemble");
    let mut norm_moment = 0.0;
    let mut norm_log_moment = 0.0;
    let mut iota_log_moment = 0.0;
    let mut iota = Vec::with_capacity(ensemble.atoms().len());
    let mut all_invertible = true;
    let mut warnings = Vec::new();
    for (k, atom) in ensemble.atoms().iter().enumerate() {
        let a = atom.matrix();
        let p = atom.weight();
        let norm = a.operator_norm();
        let io = grid
            .directions()
            .map(|x| norm2(&a.apply(x)))
            .fold(f64::INFINITY, f64::min);
        let ns = norm.powf(s);
        norm_moment += p * ns;
        norm_log_moment += p * ns * norm.ln().abs();
        iota_log_moment += p * ns * io.ln().abs();
        iota.push(io);
        if a.determinant().abs() <= SINGULAR_DET_TOL {
            all_invertible = false;
            warnings.push(format!(
                "atom {k} is singular; the zero-mass-on-hyperplanes hypothesis of the tail theorem is unverified"
            ));
        }
    }
    let all_finite = norm_moment.is_finite() && norm_log_moment.is_finite() && iota_log_moment.is_finite();
    HypothesisMoments {
        s,
        norm_moment,
        norm_log_moment,
        iota_log_moment,
        iota,
        iota_is_grid_approximation: true,
        all_finite,
        all_invertible,
        warnings,
    }
}
