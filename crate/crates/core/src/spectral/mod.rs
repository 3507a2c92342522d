//! Transfer operators on the unit slice and the spectral objects built from
//! them: `κ(s)`, the eigenfunction `e^s`, the eigenmeasure `ν^s`, the
//! stationary measure `π^s` of the tilted chain, and `α(s) = κ′(s)/κ(s)`.

mod chi;
mod grid;
mod mc;
mod operator;

pub use chi::{find_chi, kappa_derivative_at_one, ChiSolution, DerivativeAtOne, CHI_BRACKET_OFFSET, FD_STEP};
pub use grid::{DirectionGrid, Stencil, MAX_DIM};
pub use mc::{kappa_mc, KappaEstimate, MC_WORK_CAP};
pub use operator::{TransferOperator, Transition};

use serde::Serialize;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};

/// Default grid resolution per dimension: at least 400 points for `d ≤ 3`.
pub fn default_resolution(dim: usize) -> usize {
    match dim {
        2 => 800,
        3 => 40,
        4 => 16,
        5 => 10,
        _ => 7,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    /// Stop when successive max-normalized iterates differ by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Steps after convergence over which the growth ratio is averaged.
    pub average_steps: usize,
    /// Smallest admissible value of the normalized eigenfunction.
    pub min_eigenfunction: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-13,
            max_iter: 100_000,
            average_steps: 10,
            min_eigenfunction: 1e-14,
        }
    }
}

/// Spectral data of `P^s` (or of `P⁎^s` when `dual` is set) on a grid.
#[derive(Debug, Clone, Serialize)]
pub struct SpectralResult {
    pub s: f64,
    pub kappa: f64,
    /// `e^s` at the grid directions, normalized to `max = 1`.
    pub e_s: Vec<f64>,
    /// `ν^s` as weights on the grid directions.
    pub nu_s: Vec<f64>,
    /// `π^s ∝ e^s ν^s`.
    pub pi_s: Vec<f64>,
    /// `α(s) = Σₓ π^s(x) Σₖ pₖ q^s(x,aₖ) log(growth)`.
    pub alpha: f64,
    /// Same average with the Euclidean `log|aₖx|`; differs from `alpha` by a
    /// coboundary that vanishes in the continuum limit.
    pub alpha_euclidean: f64,
    /// `|T φ − κ φ|∞` for the max-normalized lift `φ`.
    pub residual: f64,
    pub iterations: usize,
    pub dual: bool,
    #[serde(skip)]
    lift: Vec<f64>,
    #[serde(skip)]
    scale: f64,
    #[serde(skip)]
    operator: Option<TransferOperator>,
}

fn max_norm_step(op: &TransferOperator, v: &[f64], out: &mut [f64]) -> f64 {
    op.apply(v, out);
    let m = out.iter().copied().fold(0.0, f64::max);
    if m > 0.0 {
        out.iter_mut().for_each(|x| *x /= m);
    }
    m
}

fn sum_norm_step(op: &TransferOperator, v: &[f64], out: &mut [f64]) -> f64 {
    op.apply_transpose(v, out);
    let m: f64 = out.iter().sum();
    if m > 0.0 {
        out.iter_mut().for_each(|x| *x /= m);
    }
    m
}

/// Power iteration; returns `(vector, averaged growth, iterations)`.
fn iterate(
    op: &TransferOperator,
    mut v: Vec<f64>,
    step: fn(&TransferOperator, &[f64], &mut [f64]) -> f64,
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, f64, usize)> {
    let mut next = vec![0.0; v.len()];
    let mut change = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let growth = step(op, &v, &mut next);
        if !(growth > 0.0) || !growth.is_finite() {
            return Err(Error::NoConvergence {
                iterations: it,
                residual: f64::INFINITY,
            });
        }
        let scale = next.iter().copied().fold(0.0, f64::max);
        change = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        std::mem::swap(&mut v, &mut next);
        if change < cfg.tol {
            let mut total = 0.0;
            for _ in 0..cfg.average_steps.max(1) {
                total += step(op, &v, &mut next);
                std::mem::swap(&mut v, &mut next);
            }
            return Ok((v, total / cfg.average_steps.max(1) as f64, it));
        }
    }
    Err(Error::NoConvergence {
        iterations: cfg.max_iter,
        residual: change,
    })
}

impl SpectralResult {
    fn from_operator(op: TransferOperator, grid: &DirectionGrid, dual: bool, cfg: &SolverConfig) -> Result<Self> {
        let n = grid.len();
        let s = op.s;
        let (lift, kappa, it_right) = iterate(&op, vec![1.0; n], max_norm_step, cfg)?;
        let (nu_lift, _, it_left) = iterate(&op, vec![1.0 / n as f64; n], sum_norm_step, cfg)?;

        let mut tv = vec![0.0; n];
        op.apply(&lift, &mut tv);
        let residual = tv
            .iter()
            .zip(&lift)
            .map(|(a, b)| (a - kappa * b).abs())
            .fold(0.0, f64::max);

        // Euclidean normalization: e(x_j) = φ_j |y_j|^{-s}, ν_E ∝ ν_lift |y_j|^s
        let ynorm_s: Vec<f64> = (0..n)
            .map(|j| crate::matrix::norm2(grid.simplex_point(j)).powf(s))
            .collect();
        let mut e_s: Vec<f64> = lift.iter().zip(&ynorm_s).map(|(p, y)| p / y).collect();
        let scale = e_s.iter().copied().fold(0.0, f64::max);
        e_s.iter_mut().for_each(|e| *e /= scale);
        let min_e = e_s.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_e >= cfg.min_eigenfunction) {
            return Err(Error::NonPositiveEigenfunction { min: min_e });
        }
        let mut nu_s: Vec<f64> = nu_lift.iter().zip(&ynorm_s).map(|(v, y)| v * y).collect();
        let nu_total: f64 = nu_s.iter().sum();
        nu_s.iter_mut().for_each(|v| *v /= nu_total);
        let mut pi_s: Vec<f64> = e_s.iter().zip(&nu_s).map(|(e, v)| e * v).collect();
        let pi_total: f64 = pi_s.iter().sum();
        pi_s.iter_mut().for_each(|p| *p /= pi_total);

        let mut result = Self {
            s,
            kappa,
            e_s,
            nu_s,
            pi_s,
            alpha: 0.0,
            alpha_euclidean: 0.0,
            residual,
            iterations: it_right.max(it_left),
            dual,
            lift,
            scale,
            operator: None,
        };
        let (alpha, alpha_euclidean) = result.lyapunov(&op);
        result.alpha = alpha;
        result.alpha_euclidean = alpha_euclidean;
        result.operator = Some(op);
        Ok(result)
    }

    fn lyapunov(&self, op: &TransferOperator) -> (f64, f64) {
        let mut alpha = 0.0;
        let mut alpha_e = 0.0;
        for (j, &pi) in self.pi_s.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for k in 0..op.atom_count() {
                let q = op.atom_weight(k) * self.tilt_with(op, j, k);
                let t = op.transition(j, k);
                alpha += pi * q * t.growth.ln();
                alpha_e += pi * q * t.log_euclidean;
            }
        }
        (alpha, alpha_e)
    }

    fn tilt_with(&self, op: &TransferOperator, j: usize, k: usize) -> f64 {
        let t = op.transition(j, k);
        t.growth.powf(self.s) * op.image_value(&self.lift, j, k) / (self.kappa * self.lift[j])
    }

    /// The discretized operator this result was computed from.
    pub fn operator(&self) -> &TransferOperator {
        self.operator.as_ref().expect("operator retained")
    }

    /// Tilt weight `q^s(x_j, aₖ) = |aₖx|^s e^s(aₖ·x) / (κ(s) e^s(x))` at grid
    /// point `j`.
    pub fn tilt(&self, j: usize, k: usize) -> f64 {
        self.tilt_with(self.operator(), j, k)
    }

    /// `Σₖ pₖ q^s(x_j, aₖ)` for every grid point.
    pub fn tilt_row_sums(&self) -> Vec<f64> {
        let op = self.operator();
        (0..self.lift.len())
            .map(|j| (0..op.atom_count()).map(|k| op.atom_weight(k) * self.tilt(j, k)).sum())
            .collect()
    }

    /// Degree-`s` homogeneous extension of `e^s` evaluated at any `w ∈ C₊`:
    /// `|w|^s e^s(w/|w|)`.
    pub fn homogeneous(&self, grid: &DirectionGrid, w: &[f64]) -> f64 {
        let total: f64 = w.iter().sum();
        let st = grid.interpolate(w);
        let value: f64 = st.iter().map(|&(i, l)| l * self.lift[i]).sum();
        total.powf(self.s) * value / self.scale
    }

    /// `e^s` at an arbitrary direction (normalized to unit length first).
    pub fn eigenfunction_at(&self, grid: &DirectionGrid, x: &[f64]) -> f64 {
        let n = crate::matrix::norm2(x);
        let unit: Vec<f64> = x.iter().map(|c| c / n).collect();
        self.homogeneous(grid, &unit)
    }
}

pub fn solve_spectral_with(
    ensemble: &Ensemble,
    s: f64,
    grid: &DirectionGrid,
    cfg: &SolverConfig,
) -> Result<SpectralResult> {
    let op = TransferOperator::assemble(ensemble, s, grid)?;
    SpectralResult::from_operator(op, grid, false, cfg)
}

/// `κ(s)`, `e^s`, `ν^s`, `π^s` and `α(s)` by power iteration on the
/// discretized `P^s` (right vector) and its transpose (left vector).
pub fn solve_spectral(ensemble: &Ensemble, s: f64, grid: &DirectionGrid) -> Result<SpectralResult> {
    solve_spectral_with(ensemble, s, grid, &SolverConfig::default())
}

/// Spectral data of the dual operator `P⁎^s`, i.e. of the law of `Aᵀ`.
pub fn solve_dual_spectral(ensemble: &Ensemble, s: f64, grid: &DirectionGrid) -> Result<SpectralResult> {
    let op = TransferOperator::assemble(&ensemble.transposed(), s, grid)?;
    SpectralResult::from_operator(op, grid, true, &SolverConfig::default())
}

/// Relative tolerance for `κ⁎(s) = κ(s)`.
pub const DUAL_KAPPA_TOL: f64 = 1e-4;

/// Dual solve that also checks `κ⁎(s)` against the primal `κ(s)`.
pub fn solve_dual_checked(ensemble: &Ensemble, s: f64, grid: &DirectionGrid) -> Result<(SpectralResult, SpectralResult)> {
    let primal = solve_spectral(ensemble, s, grid)?;
    let dual = solve_dual_spectral(ensemble, s, grid)?;
    if (dual.kappa - primal.kappa).abs() > DUAL_KAPPA_TOL * primal.kappa {
        return Err(Error::DualMismatch {
            dual: dual.kappa,
            primal: primal.kappa,
        });
    }
    Ok((primal, dual))
}

/// One row of `kappa_curve.csv`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct KappaPoint {
    pub s: f64,
    pub kappa: f64,
    pub alpha: f64,
    pub residual: f64,
    pub grid_resolution: usize,
}

pub fn kappa_curve(ensemble: &Ensemble, s_values: &[f64], grid: &DirectionGrid) -> Result<Vec<KappaPoint>> {
    s_values
        .iter()
        .map(|&s| {
            let r = solve_spectral(ensemble, s, grid)?;
            Ok(KappaPoint {
                s,
                kappa: r.kappa,
                alpha: r.alpha,
                residual: r.residual,
                grid_resolution: grid.resolution(),
            })
        })
        .collect()
}
