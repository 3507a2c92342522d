//! `κ′(1⁻)` and the tail exponent `χ`.

use serde::Serialize;

use super::{solve_spectral, DirectionGrid};
use crate::ensemble::Ensemble;
use crate::error::{Error, NoRootReason, Result};
use crate::matrix::dot;

/// Step for central differences of `κ`.
pub const FD_STEP: f64 = 1e-3;
/// Left end of the `χ` bracket is `1 + CHI_BRACKET_OFFSET`.
pub const CHI_BRACKET_OFFSET: f64 = 1e-4;
/// Bisection stops when the bracket is narrower than this.
pub const CHI_S_TOL: f64 = 1e-8;
/// `|r(m)E[N] − 1|` above this is not calibrated.
pub const CALIBRATION_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeAtOne {
    pub kappa_one: f64,
    /// `κ(1)·α(1)`
    pub alpha_form: f64,
    /// `(1/r(m)) Σₓ π¹(x) Σₖ pₖ (⟨v*,aₖx⟩/⟨v*,x⟩) log⟨v*,aₖx⟩`, with `|v*|∞ = 1`.
    pub vstar_form: f64,
    /// `(κ(1+h) − κ(1−h)) / 2h`
    pub fd_form: f64,
    /// `vstar_form − alpha_form`
    pub vstar_deviation: f64,
    /// `Σₓ π¹(x) log⟨v*,x⟩`, the term separating the two closed forms.
    pub log_eigenvector_average: f64,
    pub h: f64,
}

pub fn kappa_derivative_at_one(ensemble: &Ensemble, grid: &DirectionGrid) -> Result<DerivativeAtOne> {
    let h = FD_STEP;
    let one = solve_spectral(ensemble, 1.0, grid)?;
    let lo = solve_spectral(ensemble, 1.0 - h, grid)?;
    let hi = solve_spectral(ensemble, 1.0 + h, grid)?;
    let perron = ensemble.mean_and_perron()?;
    let vmax = perron.left.coords().iter().copied().fold(0.0, f64::max);
    let vstar: Vec<f64> = perron.left.coords().iter().map(|c| c / vmax).collect();

    let mut vstar_sum = 0.0;
    let mut log_avg = 0.0;
    for (j, x) in grid.directions().enumerate() {
        let pi = one.pi_s[j];
        if pi == 0.0 {
            continue;
        }
        let vx = dot(&vstar, x);
        log_avg += pi * vx.ln();
        let inner: f64 = ensemble
            .atoms()
            .iter()
            .map(|atom| {
                let vax = dot(&vstar, &atom.matrix().apply(x));
                atom.weight() * (vax / vx) * vax.ln()
            })
            .sum();
        vstar_sum += pi * inner;
    }
    let vstar_form = vstar_sum / perron.radius;
    let alpha_form = one.kappa * one.alpha;
    Ok(DerivativeAtOne {
        kappa_one: one.kappa,
        alpha_form,
        vstar_form,
        fd_form: (hi.kappa - lo.kappa) / (2.0 * h),
        vstar_deviation: vstar_form - alpha_form,
        log_eigenvector_average: log_avg,
        h,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ChiSolution {
    pub chi: f64,
    pub kappa_at_chi: f64,
    /// `κ(χ)·E[N]`
    pub calibration_at_chi: f64,
    pub bracket: (f64, f64),
    /// `α(1) = κ′(1⁻)/κ(1)`; negative for a valid solution.
    pub derivative_at_one: f64,
    pub derivative_sign_at_one: i8,
    /// `(s, log κ(s) + log E[N])` at every scanned and bisected `s`.
    pub trace: Vec<(f64, f64)>,
    pub grid_resolution: usize,
}

/// Root `χ > 1` of `κ(s)·E[N] = 1` for a calibrated ensemble.
///
/// The search starts at `1 + δ` and doubles the offset from 1 until the sign
/// of `log κ(s) + log E[N]` changes or `s_max` is reached, then bisects.
pub fn find_chi(ensemble: &Ensemble, s_max: f64, grid: &DirectionGrid) -> Result<ChiSolution> {
    let log_n = ensemble.branching().mean().ln();
    let calibration = ensemble.calibration_product()?;
    if (calibration - 1.0).abs() > CALIBRATION_TOL {
        return Err(Error::NoRoot {
            reason: NoRootReason::NotCalibrated,
            trace: vec![(1.0, calibration.ln())],
        });
    }
    let at_one = solve_spectral(ensemble, 1.0, grid)?;
    let mut trace = vec![(1.0, at_one.kappa.ln() + log_n)];
    if at_one.alpha >= 0.0 {
        return Err(Error::NoRoot {
            reason: NoRootReason::DerivativeNonnegative,
            trace,
        });
    }
    let f = |s: f64, trace: &mut Vec<(f64, f64)>| -> Result<f64> {
        let k = solve_spectral(ensemble, s, grid)?.kappa;
        let v = k.ln() + log_n;
        trace.push((s, v));
        Ok(v)
    };

    let mut offset = CHI_BRACKET_OFFSET;
    let mut lo = 1.0 + offset;
    let mut f_lo = f(lo, &mut trace)?;
    let mut hi = None;
    while hi.is_none() {
        if lo >= s_max {
            break;
        }
        offset *= 2.0;
        let s = (1.0 + offset).min(s_max);
        let v = f(s, &mut trace)?;
        if v > 0.0 && f_lo <= 0.0 {
            hi = Some(s);
        } else {
            lo = s;
            f_lo = v;
        }
    }
    let Some(mut hi) = hi else {
        return Err(Error::NoRoot {
            reason: NoRootReason::KappaStaysBelow,
            trace,
        });
    };
    let bracket = (lo, hi);
    while hi - lo > CHI_S_TOL {
        let mid = 0.5 * (lo + hi);
        if f(mid, &mut trace)? > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let chi = 0.5 * (lo + hi);
    let kappa_at_chi = solve_spectral(ensemble, chi, grid)?.kappa;
    Ok(ChiSolution {
        chi,
        kappa_at_chi,
        calibration_at_chi: kappa_at_chi * ensemble.branching().mean(),
        bracket,
        derivative_at_one: at_one.alpha,
        derivative_sign_at_one: if at_one.alpha < 0.0 { -1 } else { 1 },
        trace,
        grid_resolution: grid.resolution(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{calibrate, BranchingLaw};

    fn oracle() -> Ensemble {
        let a0 = |w: f64| vec![vec![w, w], vec![w, 2.0 * w]];
        Ensemble::from_weighted_rows(&[(0.8, a0(0.5)), (0.2, a0(4.0))], BranchingLaw::Constant(2)).unwrap()
    }

    /// Root of `(1/2.4)^χ (0.8·0.5^χ + 0.2·4^χ) = 1/2` by plain bisection.
    fn scalar_chi() -> f64 {
        let g = |c: f64| (1.0f64 / 2.4).powf(c) * (0.8 * 0.5f64.powf(c) + 0.2 * 4f64.powf(c)) - 0.5;
        let (mut lo, mut hi) = (1.0001, 6.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn calibrated_oracle_chi() {
        let (cal, _) = calibrate(&oracle()).unwrap();
        let grid = DirectionGrid::build(2, 64).unwrap();
        let sol = find_chi(&cal, 6.0, &grid).unwrap();
        let expected = scalar_chi();
        assert!((expected - 1.4285).abs() < 1e-4);
        assert!((sol.chi - expected).abs() < 1e-3, "{} vs {expected}", sol.chi);
        assert!((sol.calibration_at_chi - 1.0).abs() < 1e-6);
        assert_eq!(sol.derivative_sign_at_one, -1);
    }

    #[test]
    fn uncalibrated_is_rejected() {
        let grid = DirectionGrid::build(2, 16).unwrap();
        let err = find_chi(&oracle(), 6.0, &grid).unwrap_err();
        assert!(matches!(err, Error::NoRoot { reason: NoRootReason::NotCalibrated, .. }));
    }

    #[test]
    fn bounded_growth_has_no_root() {
        // calibrated, but every atom shrinks: κ(s)E[N] decreases for s > 1
        let rows = |w: f64| vec![vec![w, 0.0], vec![0.0, w]];
        let e = Ensemble::from_weighted_rows(&[(0.5, rows(0.4)), (0.5, rows(0.6))], BranchingLaw::Constant(2))
            .unwrap();
        let grid = DirectionGrid::build(2, 8).unwrap();
        let err = find_chi(&e, 6.0, &grid).unwrap_err();
        match err {
            Error::NoRoot { reason, trace } => {
                assert_eq!(reason, NoRootReason::KappaStaysBelow);
                assert!(trace.len() > 5);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn nonnegative_derivative_is_rejected() {
        // W ∈ {0.1 w.p. 0.9, 10 w.p. 0.1}: α(1) = E[W log W]/E[W] − log 2E[W] ≈ 1.143
        let a0 = |w: f64| vec![vec![w, w], vec![w, 2.0 * w]];
        let e = Ensemble::from_weighted_rows(&[(0.9, a0(0.1)), (0.1, a0(10.0))], BranchingLaw::Constant(2)).unwrap();
        let (cal, _) = calibrate(&e).unwrap();
        let grid = DirectionGrid::build(2, 16).unwrap();
        let err = find_chi(&cal, 6.0, &grid).unwrap_err();
        assert!(matches!(err, Error::NoRoot { reason: NoRootReason::DerivativeNonnegative, .. }));
    }

    #[test]
    fn identity_derivative() {
        let e = Ensemble::from_weighted_rows(&[(1.0, vec![vec![1.0, 0.0], vec![0.0, 1.0]])], BranchingLaw::Constant(1))
            .unwrap();
        let grid = DirectionGrid::build(2, 32).unwrap();
        let d = kappa_derivative_at_one(&e, &grid).unwrap();
        assert!(d.alpha_form.abs() < 1e-12);
        assert!(d.fd_form.abs() < 1e-9);
        // the closed form with log⟨v*,ax⟩ picks up Σπ log⟨v*,x⟩
        assert!((d.vstar_deviation - d.log_eigenvector_average).abs() < 1e-9);
    }

    #[test]
    fn oracle_derivative_matches_closed_form() {
        let grid = DirectionGrid::build(2, 200).unwrap();
        let d = kappa_derivative_at_one(&oracle(), &grid).unwrap();
        let r0 = (3.0 + 5f64.sqrt()) / 2.0;
        let ew_log_w = 0.8 * 0.5 * 0.5f64.ln() + 0.2 * 4.0 * 4f64.ln();
        let kappa = 1.2 * r0;
        let alpha = ew_log_w / 1.2 + r0.ln();
        assert!((d.kappa_one - kappa).abs() < 1e-9 * kappa);
        assert!((d.alpha_form - kappa * alpha).abs() < 1e-3 * kappa);
        assert!((d.alpha_form - d.fd_form).abs() < 1e-3 * kappa);
    }
}
