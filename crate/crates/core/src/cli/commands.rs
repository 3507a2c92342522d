use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use super::{fmt_f64, Command, Common, Failure, RunDir, RunManifest, EXIT_CHECK_FAILED, EXIT_MALFORMED, EXIT_WARNINGS};
use crate::cascade::{
    annotate_moments, fixpoint_pool, martingale_mean_of, moment_probe, read_snapshot, simulate_replicas, write_snapshot,
    CascadeConfig, MomentRow, PoolOptions, CALIBRATION_TOL, MOMENT_MIN_POOL,
};
use crate::ensemble::{
    calibrate, check_condition_c, hypothesis_moments, lattice_diagnostic, parse_model, BranchingLaw, ConditionReport,
    Ensemble, HypothesisMoments, LatticeReport, LatticeVerdict,
};
use crate::rng::StreamSeed;
use crate::spectral::{
    default_resolution, find_chi, kappa_derivative_at_one, solve_dual_spectral, solve_spectral, ChiSolution,
    DerivativeAtOne, DirectionGrid, KappaPoint,
};
use crate::tail::{
    auto_directions, compare_shapes, harmonicity_check, perron_dual_direction, rank_table, tail_constants, tail_scan,
    HarmonicityRow, ShapeComparison, TailOptions, TailReport, HILL_MIN_K,
};

/// Upper end of the χ search.
pub const CHI_S_MAX: f64 = 8.0;
/// Largest pool `fixpoint` will allocate.
pub const MAX_POOL: usize = 10_000_000;
/// Products sampled by the condition and lattice checks.
pub const CHECK_SAMPLES: usize = 200;
const DEFAULT_S: [f64; 6] = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0];
const AUTO_DIRECTIONS: usize = 8;

pub(super) fn dispatch(command: &Command, workers: usize) -> Result<i32, Failure> {
    match command {
        Command::Check { common } => {
            let mut run = begin("check", BTreeMap::new(), common, workers, None)?;
            finish(&mut run, |run| check(run, common))
        }
        Command::Spectral { common, s, chi, calibrate } => {
            let args = BTreeMap::from([
                ("s".to_string(), json!(s)),
                ("chi".to_string(), json!(chi)),
                ("calibrate".to_string(), json!(calibrate)),
                ("force".to_string(), json!(common.force)),
            ]);
            let mut run = begin("spectral", args, common, workers, common.grid)?;
            finish(&mut run, |run| spectral(run, common, s, *chi, *calibrate))
        }
        Command::Cascade { common, depth, replicas, calibrate } => {
            let args = BTreeMap::from([
                ("depth".to_string(), json!(depth)),
                ("replicas".to_string(), json!(replicas)),
                ("calibrate".to_string(), json!(calibrate)),
                ("force".to_string(), json!(common.force)),
            ]);
            let mut run = begin("cascade", args, common, workers, None)?;
            finish(&mut run, |run| cascade(run, common, *depth, *replicas, *calibrate))
        }
        Command::Fixpoint { common, pool_size, generations, s, calibrate } => {
            let args = BTreeMap::from([
                ("pool_size".to_string(), json!(pool_size)),
                ("generations".to_string(), json!(generations)),
                ("s".to_string(), json!(s)),
                ("calibrate".to_string(), json!(calibrate)),
                ("force".to_string(), json!(common.force)),
            ]);
            let mut run = begin("fixpoint", args, common, workers, common.grid)?;
            finish(&mut run, |run| fixpoint(run, common, *pool_size, *generations, s, *calibrate))
        }
        Command::Tail { common, pool, directions, calibrate } => {
            let pool_bytes = std::fs::read(pool).map_err(|e| Failure::usage(format!("{}: {e}", pool.display())))?;
            let args = BTreeMap::from([
                ("pool_hash".to_string(), json!(super::sha256_hex(&pool_bytes))),
                ("directions".to_string(), json!(directions)),
                ("calibrate".to_string(), json!(calibrate)),
                ("force".to_string(), json!(common.force)),
            ]);
            let mut run = begin("tail", args, common, workers, common.grid)?;
            finish(&mut run, |run| tail(run, common, pool, &pool_bytes, directions, *calibrate))
        }
    }
}

fn begin(
    command: &str,
    args: BTreeMap<String, Value>,
    common: &Common,
    workers: usize,
    grid: Option<usize>,
) -> Result<RunDir, Failure> {
    let bytes =
        std::fs::read(&common.model).map_err(|e| Failure::usage(format!("{}: {e}", common.model.display())))?;
    let manifest = RunManifest::new(command, args, &common.model, &bytes, common.seed, grid, workers);
    RunDir::create(&common.out, manifest).map_err(|e| Failure::new(EXIT_MALFORMED, format!("{}: {e}", common.out.display())))
}

fn finish(run: &mut RunDir, body: impl FnOnce(&mut RunDir) -> Result<i32, Failure>) -> Result<i32, Failure> {
    let outcome = body(run);
    let status = match &outcome {
        Ok(0) => "ok".to_string(),
        Ok(EXIT_WARNINGS) => "warnings".to_string(),
        Ok(code) => format!("failed ({code})"),
        Err(f) => format!("error ({}): {}", f.code, f.message),
    };
    run.finish(&status).map_err(Failure::from)?;
    outcome
}

fn load(common: &Common) -> Result<Ensemble, Failure> {
    let text = std::fs::read_to_string(&common.model)
        .map_err(|e| Failure::usage(format!("{}: {e}", common.model.display())))?;
    parse_model(&text).map_err(|e| Failure::new(super::exit_code(&e), format!("{}: {e}", common.model.display())))
}

fn grid_for(ensemble: &Ensemble, common: &Common) -> Result<DirectionGrid, Failure> {
    let d = ensemble.dim();
    Ok(DirectionGrid::build(d, common.grid.unwrap_or_else(|| default_resolution(d)))?)
}

#[derive(Debug, Serialize)]
struct Calibration {
    product: f64,
    calibrated: bool,
    factor: f64,
}

#[derive(Debug, Serialize)]
struct CheckReport {
    dimension: usize,
    atoms: usize,
    branching_mean: f64,
    condition: ConditionReport,
    calibration: Calibration,
    hypotheses: HypothesisMoments,
    lattice: LatticeReport,
    failures: Vec<String>,
    warnings: Vec<String>,
    verdict: &'static str,
}

fn run_checks(ensemble: &Ensemble, seed: u64) -> Result<CheckReport, Failure> {
    let mut rng = StreamSeed::new(seed).label("check").rng();
    let condition = check_condition_c(ensemble, CHECK_SAMPLES, &mut rng);
    let lattice = lattice_diagnostic(ensemble, CHECK_SAMPLES, &mut rng);
    let hypotheses = hypothesis_moments(ensemble, 1.0);
    let product = ensemble.calibration_product()?;
    let calibrated = (product - 1.0).abs() <= CALIBRATION_TOL;
    let factor = 1.0 / product;

    let mut failures = Vec::new();
    if !condition.verdict {
        failures.extend(condition.notes.iter().filter(|n| !n.contains("heuristic")).cloned());
    }
    let mut warnings = hypotheses.warnings.clone();
    if !calibrated {
        warnings.push(format!(
            "not calibrated: r(m)·E[N] = {product}; --calibrate rescales the atoms by {factor}"
        ));
    }
    if lattice.verdict == LatticeVerdict::ArithmeticLike {
        warnings.push(format!(
            "log-spectrum of sampled products lies on a lattice of spacing {:?}",
            lattice.spacing
        ));
    }
    let branching = ensemble.branching();
    if let BranchingLaw::Finite(pmf) = branching {
        if pmf.iter().any(|&(n, p)| n < 2 && p > 0.0) {
            warnings.push("N < 2 with positive probability; the tail theorem assumes N ≥ 2".into());
        }
    }
    if branching.mean() <= 1.0 {
        warnings.push(format!("E[N] = {} ≤ 1; the tree dies out", branching.mean()));
    }
    let verdict = if !failures.is_empty() {
        "fail"
    } else if !warnings.is_empty() {
        "warnings"
    } else {
        "pass"
    };
    Ok(CheckReport {
        dimension: ensemble.dim(),
        atoms: ensemble.atoms().len(),
        branching_mean: branching.mean(),
        condition,
        calibration: Calibration {
            product,
            calibrated,
            factor,
        },
        hypotheses,
        lattice,
        failures,
        warnings,
        verdict,
    })
}

fn check(run: &mut RunDir, common: &Common) -> Result<i32, Failure> {
    let ensemble = load(common)?;
    let report = run_checks(&ensemble, common.seed)?;
    run.write_json("check.json", &report)?;
    for f in &report.failures {
        println!("FAIL {f}");
    }
    for w in &report.warnings {
        println!("WARN {w}");
    }
    println!("check: {}", report.verdict);
    Ok(match report.verdict {
        "pass" => 0,
        "warnings" => EXIT_WARNINGS,
        _ => EXIT_CHECK_FAILED,
    })
}

/// Loads the model, refuses it when `check` fails (unless forced) and
/// optionally calibrates. Returns the ensemble and the factor applied.
fn prepare(common: &Common, calibrate_model: bool) -> Result<(Ensemble, f64), Failure> {
    let ensemble = load(common)?;
    if !common.force {
        let report = run_checks(&ensemble, common.seed)?;
        if !report.failures.is_empty() {
            return Err(Failure::new(
                EXIT_CHECK_FAILED,
                format!("model fails check ({}); rerun with --force to override", report.failures.join("; ")),
            ));
        }
    }
    if calibrate_model {
        let (scaled, t) = calibrate(&ensemble)?;
        println!("calibrated: atoms scaled by {t}");
        Ok((scaled, t))
    } else {
        Ok((ensemble, 1.0))
    }
}

fn f64_cells(values: &[f64]) -> impl Iterator<Item = String> + '_ {
    values.iter().map(|&x| fmt_f64(x))
}

fn coord_header(d: usize) -> impl Iterator<Item = String> {
    (1..=d).map(|i| format!("x{i}"))
}

#[derive(Debug, Serialize)]
struct SpectralSummary {
    calibration_factor: f64,
    kappa_one: f64,
    perron_radius: f64,
    relative_delta: f64,
    derivative_at_one: DerivativeAtOne,
    curve: Vec<KappaPoint>,
    eigenfunction_files: Vec<String>,
}

fn spectral(run: &mut RunDir, common: &Common, s_list: &[f64], want_chi: bool, calibrate_model: bool) -> Result<i32, Failure> {
    let (ensemble, factor) = prepare(common, calibrate_model)?;
    let grid = grid_for(&ensemble, common)?;
    let s_list: Vec<f64> = if s_list.is_empty() { DEFAULT_S.to_vec() } else { s_list.to_vec() };
    let d = ensemble.dim();
    let mut curve = Vec::with_capacity(s_list.len());
    let mut files = Vec::new();
    let mut kappa_one = None;
    for &s in &s_list {
        let r = solve_spectral(&ensemble, s, &grid)?;
        if s == 1.0 {
            kappa_one = Some(r.kappa);
        }
        curve.push(KappaPoint {
            s,
            kappa: r.kappa,
            alpha: r.alpha,
            residual: r.residual,
            grid_resolution: grid.resolution(),
        });
        let name = format!("e_s_{s}.csv");
        let header: Vec<String> = coord_header(d).chain(["e_s", "nu_s", "pi_s"].map(String::from)).collect();
        let rows = (0..grid.len()).map(|j| {
            f64_cells(grid.point(j))
                .chain(f64_cells(&[r.e_s[j], r.nu_s[j], r.pi_s[j]]))
                .collect()
        });
        run.write_csv(&name, &header, rows)?;
        files.push(name);
    }
    let header = ["s", "kappa", "alpha", "residual", "grid_resolution"].map(String::from);
    let rows = curve.iter().map(|p| {
        f64_cells(&[p.s, p.kappa, p.alpha, p.residual])
            .chain([p.grid_resolution.to_string()])
            .collect()
    });
    run.write_csv("kappa_curve.csv", &header, rows)?;

    let kappa_one = match kappa_one {
        Some(k) => k,
        None => solve_spectral(&ensemble, 1.0, &grid)?.kappa,
    };
    let radius = ensemble.mean_and_perron()?.radius;
    let relative_delta = (kappa_one - radius) / radius;
    let derivative = kappa_derivative_at_one(&ensemble, &grid)?;
    println!("kappa(1) = {kappa_one:.12}  r(m) = {radius:.12}  relative delta = {relative_delta:.3e}");
    println!(
        "kappa'(1-): alpha form {:.9}  closed form {:.9}  finite difference {:.9}",
        derivative.alpha_form, derivative.vstar_form, derivative.fd_form
    );
    run.write_json(
        "spectral.json",
        &SpectralSummary {
            calibration_factor: factor,
            kappa_one,
            perron_radius: radius,
            relative_delta,
            derivative_at_one: derivative,
            curve,
            eigenfunction_files: files,
        },
    )?;

    if want_chi {
        let chi: ChiSolution = find_chi(&ensemble, CHI_S_MAX, &grid)?;
        println!("chi = {:.9}  (bracket {:.9}..{:.9})", chi.chi, chi.bracket.0, chi.bracket.1);
        run.write_json("chi.json", &chi)?;
    }
    Ok(0)
}

fn cascade(run: &mut RunDir, common: &Common, depth: usize, replicas: usize, calibrate_model: bool) -> Result<i32, Failure> {
    let (ensemble, factor) = prepare(common, calibrate_model)?;
    let d = ensemble.dim();
    let config = CascadeConfig::new(ensemble, depth, replicas, StreamSeed::new(common.seed))?;
    let samples = simulate_replicas(&config);
    let summary = martingale_mean_of(&config, &samples);
    let header: Vec<String> = std::iter::once("replica".to_string()).chain(coord_header(d)).collect();
    let rows = samples
        .iter()
        .enumerate()
        .map(|(i, y)| std::iter::once(i.to_string()).chain(f64_cells(y)).collect());
    run.write_csv("yn.csv", &header, rows)?;
    let mut value = serde_json::to_value(&summary).map_err(crate::Error::from)?;
    value["calibration_factor"] = json!(factor);
    run.write_json("martingale.json", &value)?;
    println!(
        "depth {depth}, {replicas} replicas: mean {:?} vs v {:?}, max |z| {:.3}",
        summary.mean,
        summary.v,
        summary.z.iter().fold(0.0f64, |m, z| m.max(z.abs()))
    );
    Ok(0)
}

#[derive(Debug, Serialize)]
struct FixpointSummary {
    calibration_factor: f64,
    pool_size: usize,
    generations: usize,
    perron_vector: Vec<f64>,
    mean: Vec<f64>,
    median_norm: f64,
    moments: Option<Vec<MomentRow>>,
    warnings: Vec<String>,
}

fn fixpoint(
    run: &mut RunDir,
    common: &Common,
    k: usize,
    generations: usize,
    s_list: &[f64],
    calibrate_model: bool,
) -> Result<i32, Failure> {
    if k > MAX_POOL {
        return Err(crate::Error::WorkCapExceeded(format!("pool of {k} particles, cap is {MAX_POOL}")).into());
    }
    let (ensemble, factor) = prepare(common, calibrate_model)?;
    let d = ensemble.dim();
    let pool = fixpoint_pool(&ensemble, k, generations, StreamSeed::new(common.seed), &PoolOptions::default())?;

    let file = std::fs::File::create(run.path("pool.snapshot")).map_err(crate::Error::from)?;
    write_snapshot(&pool, run.id(), std::io::BufWriter::new(file))?;
    run.register("pool.snapshot");

    let header: Vec<String> = std::iter::once("generation".to_string())
        .chain((1..=d).map(|i| format!("mean{i}")))
        .chain(["median_norm", "proxy_distance"].map(String::from))
        .collect();
    let rows = pool.history.iter().map(|h| {
        std::iter::once(h.generation.to_string())
            .chain(f64_cells(&h.mean))
            .chain([fmt_f64(h.median_norm), h.proxy_distance.map(fmt_f64).unwrap_or_default()])
            .collect()
    });
    run.write_csv("fixpoint_diagnostics.csv", &header, rows)?;

    let mut warnings = pool.warnings.clone();
    let moments = if k >= MOMENT_MIN_POOL {
        let s_list: Vec<f64> = if s_list.is_empty() { vec![1.0] } else { s_list.to_vec() };
        let mut rows = moment_probe(&pool, &s_list)?;
        annotate_moments(&mut rows, &ensemble, &grid_for(&ensemble, common)?)?;
        for r in &rows {
            println!("E|Z|^{}: {:?} (change {:.3})", r.s, r.verdict, r.last_change);
        }
        Some(rows)
    } else {
        warnings.push(format!("moment probe skipped: pool below {MOMENT_MIN_POOL}"));
        None
    };
    for w in &warnings {
        println!("WARN {w}");
    }
    let summary = FixpointSummary {
        calibration_factor: factor,
        pool_size: k,
        generations,
        perron_vector: ensemble.mean_and_perron()?.right.coords().to_vec(),
        mean: pool.mean(),
        median_norm: pool.median_norm(),
        moments,
        warnings,
    };
    println!("pool mean {:?}, median norm {:.6}", summary.mean, summary.median_norm);
    run.write_json("fixpoint.json", &summary)?;
    Ok(0)
}

fn parse_directions(spec: &str, ensemble: &Ensemble) -> Result<Vec<Vec<f64>>, Failure> {
    let d = ensemble.dim();
    if spec.trim() == "auto" {
        let mut dirs = vec![perron_dual_direction(ensemble)?];
        dirs.extend(auto_directions(d, AUTO_DIRECTIONS));
        return Ok(dirs);
    }
    spec.split(';')
        .map(|item| {
            let coords: Vec<f64> = item
                .split(',')
                .map(|c| c.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| Failure::usage(format!("--directions: cannot parse `{item}`")))?;
            if coords.len() != d {
                return Err(Failure::usage(format!("--directions: `{item}` has {} coordinates, expected {d}", coords.len())));
            }
            if coords.iter().any(|&c| !(c >= 0.0 && c.is_finite())) {
                return Err(Failure::usage(format!("--directions: `{item}` is not in the cone")));
            }
            let n = crate::matrix::norm2(&coords);
            if n == 0.0 {
                return Err(Failure::usage(format!("--directions: `{item}` is zero")));
            }
            Ok(coords.into_iter().map(|c| c / n).collect())
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct TailDocument {
    calibration_factor: f64,
    pool_manifest: String,
    pool_generation: usize,
    chi: ChiSolution,
    common_k: usize,
    reports: Vec<TailReport>,
    harmonicity: Vec<HarmonicityRow>,
    shape: Option<ShapeComparison>,
    warnings: Vec<String>,
}

fn tail(
    run: &mut RunDir,
    common: &Common,
    pool_path: &Path,
    pool_bytes: &[u8],
    directions: &str,
    calibrate_model: bool,
) -> Result<i32, Failure> {
    let (ensemble, factor) = prepare(common, calibrate_model)?;
    if !ensemble.branching().is_constant() {
        return Err(crate::Error::NonConstantBranching.into());
    }
    let (snap, pool) = read_snapshot(pool_bytes)
        .map_err(|e| Failure::new(super::exit_code(&e), format!("{}: {e}", pool_path.display())))?;
    if snap.dimension != ensemble.dim() {
        return Err(Failure::usage(format!(
            "{}: pool dimension {} does not match model dimension {}",
            pool_path.display(),
            snap.dimension,
            ensemble.dim()
        )));
    }
    let mut warnings = Vec::new();
    if snap.ensemble_hash != ensemble.content_hash() {
        warnings.push("pool was generated from a different ensemble".to_string());
    }
    let dirs = parse_directions(directions, &ensemble)?;
    let grid = grid_for(&ensemble, common)?;
    let chi = find_chi(&ensemble, CHI_S_MAX, &grid)?;
    let opts = TailOptions {
        seed: StreamSeed::new(common.seed),
        ..TailOptions::default()
    };
    let mut reports = dirs
        .iter()
        .map(|u| tail_scan(&pool, &ensemble, u, chi.chi, &opts))
        .collect::<crate::Result<Vec<_>>>()?;
    let common_k = (pool.len() / 500).max(HILL_MIN_K);
    let dual = solve_dual_spectral(&ensemble, chi.chi, &grid)?;
    let harmonicity = harmonicity_check(&pool, &ensemble, chi.chi, &dirs, common_k, Some((&dual, &grid)))?;
    for (r, h) in reports.iter_mut().zip(&harmonicity) {
        r.harmonicity_ratio = Some(h.ratio);
    }
    let shape = if dirs.len() >= crate::tail::MIN_SHAPE_DIRECTIONS {
        let d_hat = tail_constants(&pool, &dirs, common_k, chi.chi)?;
        Some(compare_shapes(&dirs, &d_hat, &dual, &grid)?)
    } else {
        warnings.push(format!(
            "shape comparison skipped: needs {} directions",
            crate::tail::MIN_SHAPE_DIRECTIONS
        ));
        None
    };

    println!("chi (spectral) = {:.6}", chi.chi);
    for r in &reports {
        println!(
            "u = {:?}: chi_hat {:.4} at k = {} ({:?}), 90% CI [{:.4}, {:.4}], D_hat {:.4e}, harmonicity {:.4}",
            r.direction,
            r.chi_hat,
            r.k_used,
            r.plateau.verdict,
            r.ci.0,
            r.ci.1,
            r.d_hat,
            r.harmonicity_ratio.unwrap_or(f64::NAN)
        );
    }
    if let Some(s) = &shape {
        println!("shape correlation D_hat vs dual eigenfunction: {:.4}", s.correlation);
    }
    for w in &warnings {
        println!("WARN {w}");
    }

    let m = (pool.len() / 100).clamp(1, 10_000);
    let rows: Vec<Vec<String>> = dirs
        .iter()
        .enumerate()
        .flat_map(|(i, u)| {
            rank_table(&pool, u, m)
                .into_iter()
                .enumerate()
                .map(move |(r, (v, p))| vec![i.to_string(), (r + 1).to_string(), fmt_f64(v), fmt_f64(p)])
        })
        .collect();
    let header = ["direction", "rank", "value", "tail_probability"].map(String::from);
    run.write_csv("ranks.csv", &header, rows)?;
    run.write_json(
        "tail_report.json",
        &TailDocument {
            calibration_factor: factor,
            pool_manifest: snap.manifest,
            pool_generation: snap.generation,
            chi,
            common_k,
            reports,
            harmonicity,
            shape,
            warnings,
        },
    )?;
    Ok(0)
}
