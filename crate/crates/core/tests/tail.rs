mod common;

use std::sync::OnceLock;

use cascade_lab::cascade::{fixpoint_pool, ParticlePool, PoolOptions};
use cascade_lab::ensemble::Ensemble;
use cascade_lab::error::Error;
use cascade_lab::rng::StreamSeed;
use cascade_lab::spectral::{find_chi, DirectionGrid};
use cascade_lab::tail::{auto_directions, harmonicity_check, perron_dual_direction, tail_constant, tail_scan, TailOptions};
use common::calibrated;
use rand::Rng;

struct Fixture {
    ensemble: Ensemble,
    chi: f64,
    pool: ParticlePool,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let ensemble = calibrated("tail.json");
        let grid = DirectionGrid::build(2, 400).unwrap();
        let chi = find_chi(&ensemble, 8.0, &grid).unwrap().chi;
        let opts = PoolOptions {
            diagnostics: false,
            ..PoolOptions::default()
        };
        let pool = fixpoint_pool(&ensemble, 1_000_000, 80, StreamSeed::new(2), &opts).unwrap();
        Fixture { ensemble, chi, pool }
    })
}

#[test]
fn harmonicity_detects_a_wrong_exponent() {
    let f = fixture();
    let dirs = auto_directions(2, 8);
    let k = f.pool.len() / 500;
    let at = harmonicity_check(&f.pool, &f.ensemble, f.chi, &dirs, k, None).unwrap();
    let off = harmonicity_check(&f.pool, &f.ensemble, f.chi + 0.3, &dirs, k, None).unwrap();
    for r in &at {
        assert!((r.ratio - 1.0).abs() < 0.05, "{r:?}");
    }
    for (a, b) in at.iter().zip(&off) {
        assert!(b.ratio > a.ratio + 0.03, "{a:?} vs {b:?}");
    }
}

#[test]
fn intervals_overlap_across_directions() {
    let f = fixture();
    let v = perron_dual_direction(&f.ensemble).unwrap();
    let opts = TailOptions::default();
    let a = tail_scan(&f.pool, &f.ensemble, &v, f.chi, &opts).unwrap();
    let b = tail_scan(&f.pool, &f.ensemble, &[1.0, 0.0], f.chi, &opts).unwrap();
    assert!(a.ci.0 <= b.ci.1 && b.ci.0 <= a.ci.1, "{:?} vs {:?}", a.ci, b.ci);
    assert!(a.ci.0 <= a.chi_hat && a.chi_hat <= a.ci.1);
}

#[test]
fn interior_projections_are_positive() {
    let f = fixture();
    for u in auto_directions(2, 8).into_iter().filter(|u| u.iter().all(|&c| c > 0.0)) {
        assert!(f.pool.projections(&u).iter().all(|&x| x > 0.0));
    }
}

#[test]
fn small_pool_is_rejected() {
    let e = calibrated("tail.json");
    let pool = fixpoint_pool(&e, 1_000, 2, StreamSeed::new(0), &PoolOptions::default()).unwrap();
    let err = tail_scan(&pool, &e, &[1.0, 0.0], 1.3, &TailOptions::default()).unwrap_err();
    assert!(matches!(err, Error::PoolTooSmall { .. }));
}

#[test]
fn tail_constant_scales_with_power_chi() {
    let mut rng = StreamSeed::new(6).rng();
    let x: Vec<f64> = (0..20_000).map(|_| (1.0 - rng.random::<f64>()).powf(-1.0 / 1.5)).collect();
    let base = tail_constant(&x, 200, 1.5);
    for lambda in [0.25, 3.0, 10.0] {
        let y: Vec<f64> = x.iter().map(|v| v * lambda).collect();
        let scaled = tail_constant(&y, 200, 1.5);
        assert!((scaled / base - lambda.powf(1.5)).abs() < 1e-9 * lambda.powf(1.5));
    }
}
