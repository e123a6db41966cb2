//! Acceptance checks, one line per criterion.
//!
//! Run with `cargo test -p nearfield-core --test acceptance`. The process
//! exits nonzero when any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nearfield_core::codebooks::{
    dpss_codebook, dpss_sequences, kernel_row, paraxial_correlation_row, sinc_kernel, spherical_codebook,
    CompensationModel, DEFAULT_R_MAX, DEFAULT_R_MIN,
};
use nearfield_core::harness::{
    draw_trial, run_point, run_sweep, table1_search, CodebookCache, EstimatorKind, ExperimentConfig, PointParams,
    StopRule, SweepConfig, SweepVariable,
};
use nearfield_core::linalg::{complex_gaussian, normalize_columns, unvec, vec_matrix, CMatrix, CVector, C64};
use nearfield_core::model::{los_channel, Point, ScenarioGeometry};
use nearfield_core::pipeline::{gram_map, max_coherence, max_gram_deviation, profile_of};
use nearfield_core::sensing::omp_matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const FC: f64 = 28e9;
const MUS: [f64; 3] = [0.25, 0.4, 0.6];
const BETAS: [f64; 3] = [1.0, 2.0, 3.0];
const EPSILONS: [f64; 3] = [0.0, 0.1, 0.3];
/// Reduced-scale Table I targets: the full-scale targets divided by three.
const DESK_TARGETS: [f64; 4] = [-5.0, -20.0 / 3.0, -25.0 / 3.0, -10.0];
/// Mean-trace tolerance defining the iteration at which a run has converged.
const CONVERGED_DB: f64 = 0.5;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn full_geometry(center: Point) -> ScenarioGeometry {
    ScenarioGeometry::new(192, 4, FC, center, 0.0).unwrap()
}

fn desk_config(trials: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.apply_desk_scale();
    c.scenario.trials = trials;
    c
}

fn orthogonality() -> Outcome {
    let g = full_geometry(Point::new(1.5, 6.0));
    let dpss = dpss_codebook(&g, 1.5, 6.0, CompensationModel::Exact).unwrap();
    let dev = max_gram_deviation(&dpss);
    let sph = spherical_codebook(&g, 1.0, DEFAULT_R_MIN, DEFAULT_R_MAX).unwrap();
    let coh = max_coherence(&gram_map(&sph));
    outcome(
        dev <= 1e-10 && coh > 0.1,
        format!("max|G_dpss - I| = {dev:.2e} (<= 1e-10), spherical coherence = {coh:.3} (> 0.1)"),
    )
}

fn sinc_approximation() -> Outcome {
    let g = full_geometry(Point::new(0.0, 5.0));
    let sum = paraxial_correlation_row(&g);
    let sinc = kernel_row(&g, CompensationModel::Paraxial).unwrap();
    let worst = sum.iter().zip(&sinc).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(worst <= 0.05, format!("max deviation {worst:.4} of peak (<= 0.05)"))
}

fn sparsification() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.trials = 20;
    let mut ordered = 0;
    let mut dpss_best = 0;
    let mut undefined = 0;
    let mut pure_ok = 0;
    let mut medians = [Vec::new(), Vec::new(), Vec::new()];
    let cache = CodebookCache::new(None);
    for t in 0..20 {
        let (geom, h) = draw_trial(&cfg, t).unwrap();
        let dft = cache.dft(&geom, 1.0).unwrap();
        let sph = cache.spherical(&geom, 1.0, DEFAULT_R_MIN, DEFAULT_R_MAX).unwrap();
        let c = geom.ue_center;
        let Ok(dpss) = dpss_codebook(&geom, c.x, c.y, CompensationModel::Exact) else {
            undefined += 1;
            continue;
        };
        let n95 = |cb| profile_of(&h.h_full, cb).unwrap().count_for_fraction(0.95);
        let (d, s, f) = (n95(&dpss), n95(&sph), n95(&dft));
        medians[0].push(d);
        medians[1].push(s);
        medians[2].push(f);
        if d < s && s < f {
            ordered += 1;
        }
        if d < s && d < f {
            dpss_best += 1;
        }
        let top = profile_of(&los_channel(&geom), &dpss)
            .unwrap()
            .fraction_in_top(geom.n_r());
        if top >= 0.95 {
            pure_ok += 1;
        }
    }
    let med = |v: &mut Vec<usize>| {
        v.sort_unstable();
        v.get(v.len() / 2).copied().unwrap_or(0)
    };
    let (md, ms, mf) = (med(&mut medians[0]), med(&mut medians[1]), med(&mut medians[2]));
    outcome(
        ordered >= 18 && pure_ok == 20,
        format!(
            "dpss<spherical<dft in {ordered}/20 (>= 18); dpss below both in {dpss_best}/20; \
             eigen-codebook undefined in {undefined}/20; median 95% counts dpss {md}, spherical {ms}, dft {mf}; \
             pure-LoS top-N_R >= 95% in {pure_ok}/20"
        ),
    )
}

fn nmse_ordering() -> Outcome {
    let cfg = desk_config(100);
    let cache = CodebookCache::new(None);
    let kinds = [EstimatorKind::Dft, EstimatorKind::Spherical, EstimatorKind::DpssTwoStep];
    let points: Vec<_> = MUS
        .iter()
        .enumerate()
        .map(|(s, &mu)| {
            let p = PointParams::with_value(&cfg, SweepVariable::Mu, mu);
            run_point(&cfg, &p, &kinds, s as u64, &cache).unwrap()
        })
        .collect();
    let finals = |k| -> Vec<f64> { points.iter().map(|p| p.get(k).unwrap().final_stats().0).collect() };
    let improving = kinds.iter().all(|&k| finals(k).windows(2).all(|w| w[1] < w[0]));
    let mut margin = f64::INFINITY;
    let mut monotone = true;
    for p in &points {
        let d = p.get(EstimatorKind::DpssTwoStep).unwrap().mean_trace_db();
        let f = p.get(EstimatorKind::Dft).unwrap().mean_trace_db();
        let s = p.get(EstimatorKind::Spherical).unwrap().mean_trace_db();
        for i in 9..d.len() {
            margin = margin.min(f[i].min(s[i]) - d[i]);
        }
        monotone &= d[1..].windows(2).all(|w| w[1] <= w[0] + 1e-9);
    }
    let fmt = |k| {
        finals(k)
            .iter()
            .map(|v| format!("{v:.2}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        improving && margin >= 3.0 && monotone,
        format!(
            "final dB over mu {MUS:?}: dft {}, spherical {}, dpss {}; strictly improving {improving}; \
             min margin at I >= 10 {margin:.2} dB (>= 3); dpss trace non-increasing {monotone}",
            fmt(EstimatorKind::Dft),
            fmt(EstimatorKind::Spherical),
            fmt(EstimatorKind::DpssTwoStep)
        ),
    )
}

fn oversampling() -> Outcome {
    let mut cfg = desk_config(100);
    cfg.sweep = SweepConfig {
        variable: SweepVariable::Beta,
        values: BETAS.to_vec(),
    };
    let r = run_sweep(&cfg).unwrap();
    let n = 128;
    let series = |k| -> Vec<(f64, usize)> {
        BETAS
            .iter()
            .map(|&b| {
                let row = r.row(b, k).unwrap();
                (row.mean_nmse_db, row.codebook_size)
            })
            .collect()
    };
    let (dft, sph, dpss) = (
        series(EstimatorKind::Dft),
        series(EstimatorKind::Spherical),
        series(EstimatorKind::DpssTwoStep),
    );
    let improving = [&dft, &sph].iter().all(|s| s.windows(2).all(|w| w[1].0 < w[0].0));
    let dft_sizes = dft.iter().zip(BETAS).all(|(d, b)| d.1 == (b * b) as usize * n);
    let sph_sizes = sph.iter().zip(BETAS).all(|(s, b)| {
        let gt = (b * 8f64).ceil() as usize;
        let gr = (b * 2f64.sqrt()).ceil() as usize;
        s.1 == gt * gt * gr * gr
    }) && sph.windows(2).all(|w| w[1].1 > w[0].1);
    let dpss_size = dpss.iter().all(|d| d.1 == n);
    let best = (0..3).all(|i| dpss[i].0 < dft[i].0 && dpss[i].0 < sph[i].0);
    let fmt = |s: &Vec<(f64, usize)>| {
        s.iter()
            .map(|(v, m)| format!("{v:.2}@{m}"))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        improving && dft_sizes && sph_sizes && dpss_size && best,
        format!(
            "dB@M over beta {BETAS:?}: dft {}, spherical {}, dpss {}; baselines improving {improving}; \
             dft M = beta^2 N {dft_sizes}; spherical grid sizes {sph_sizes}; dpss M = N {dpss_size}; dpss best {best}",
            fmt(&dft),
            fmt(&sph),
            fmt(&dpss)
        ),
    )
}

fn localization_robustness() -> Outcome {
    let cfg = desk_config(100);
    let cache = CodebookCache::new(None);
    let mut finals = Vec::new();
    let mut iters = Vec::new();
    for (s, &eps) in EPSILONS.iter().enumerate() {
        let p = PointParams::with_value(&cfg, SweepVariable::Epsilon, eps);
        let point = run_point(&cfg, &p, &[EstimatorKind::DpssTwoStep], s as u64, &cache).unwrap();
        let e = &point.estimators[0];
        finals.push(e.final_stats().0);
        iters.push(e.iterations_to_converge(CONVERGED_DB));
    }
    let close = finals.iter().all(|f| (f - finals[0]).abs() <= 5.0);
    let ordered = iters.windows(2).all(|w| w[1] >= w[0]);
    outcome(
        close && ordered,
        format!(
            "final dB over eps {EPSILONS:?} m: {:.2}/{:.2}/{:.2} (within 5 dB of eps = 0: {close}); \
             iterations to within {CONVERGED_DB} dB: {iters:?} (non-decreasing: {ordered})",
            finals[0], finals[1], finals[2]
        ),
    )
}

fn table_shape() -> Outcome {
    let cfg = desk_config(50);
    let n = 128;
    let sizes: Vec<usize> = [1, 2, 3, 4, 6, 9, 12, 16].iter().map(|f| f * n).collect();
    let t = table1_search(&cfg, &DESK_TARGETS, &sizes).unwrap();
    let dpss: Vec<_> = DESK_TARGETS
        .iter()
        .map(|&x| t.required(EstimatorKind::DpssTwoStep, x))
        .collect();
    let dpss_const = dpss.iter().flatten().all(|&m| m == n) && dpss.iter().any(Option::is_some);
    let nondecreasing = [EstimatorKind::Dft, EstimatorKind::Spherical].iter().all(|&k| {
        let req: Vec<usize> = DESK_TARGETS
            .iter()
            .map(|&x| t.required(k, x).unwrap_or(usize::MAX))
            .collect();
        req.windows(2).all(|w| w[1] >= w[0])
    });
    let exclusive = DESK_TARGETS.iter().any(|&x| {
        t.required(EstimatorKind::Dft, x).is_none()
            && t.required(EstimatorKind::Spherical, x).is_none()
            && t.required(EstimatorKind::DpssTwoStep, x).is_some()
    });
    let show = |k| {
        DESK_TARGETS
            .iter()
            .map(|&x| t.required(k, x).map_or("N/A".to_string(), |m| m.to_string()))
            .collect::<Vec<_>>()
            .join("/")
    };
    outcome(
        dpss_const && nondecreasing && exclusive,
        format!(
            "targets -5/-6.67/-8.33/-10 dB: dft {}, spherical {}, dpss {}; dpss constant {dpss_const}; \
             baselines non-decreasing {nondecreasing}; target only dpss meets {exclusive}",
            show(EstimatorKind::Dft),
            show(EstimatorKind::Spherical),
            show(EstimatorKind::DpssTwoStep)
        ),
    )
}

fn planted_support(rng: &mut ChaCha8Rng) -> bool {
    let (tau, m, k) = (32, 96, 3);
    let mut a = CMatrix::from_fn(tau, m, |_, _| complex_gaussian(rng, 1.0));
    normalize_columns(&mut a);
    let mut support = Vec::new();
    while support.len() < k {
        let i = rng.gen_range(0..m);
        if !support.contains(&i) {
            support.push(i);
        }
    }
    let mut y = CVector::zeros(tau);
    for &i in &support {
        let c = C64::from_polar(rng.gen_range(1.0..2.0), rng.gen_range(0.0..std::f64::consts::TAU));
        y.axpy(c, &a.column(i), C64::new(1.0, 0.0));
    }
    let r = omp_matrix(&a, &y, k, 1e-10 * y.norm()).unwrap();
    let mut found = r.support.clone();
    found.sort_unstable();
    support.sort_unstable();
    found == support
}

fn oracle_equivalence() -> Outcome {
    let mut cfg = desk_config(5);
    cfg.estimators = vec![EstimatorKind::DpssOracle];
    cfg.snr_db = f64::INFINITY;
    cfg.mu = 1.0;
    cfg.omp.max_iters = 128;
    cfg.omp.stop = StopRule::Relative { factor: 1e-9 };
    cfg.scenario.ue_distance_range_m = [3.0, 20.0];
    cfg.sweep = SweepConfig {
        variable: SweepVariable::Mu,
        values: vec![1.0],
    };
    let r = run_sweep(&cfg).unwrap();
    let nmse = r.rows[0].mean_nmse_db;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let recovered = (0..100).filter(|_| planted_support(&mut rng)).count();
    outcome(
        nmse <= -80.0 && recovered == 100,
        format!("noiseless full-rate eigen-codebook NMSE {nmse:.1} dB (<= -80); planted 3-sparse supports recovered {recovered}/100"),
    )
}

fn property_suites() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut failures = Vec::new();
    let mut check = |name: &str, ok: bool| {
        if !ok && !failures.contains(&name.to_string()) {
            failures.push(name.to_string());
        }
    };
    for _ in 0..50 {
        let tau = rng.gen_range(4..16);
        let m = rng.gen_range(tau..3 * tau);
        let a = CMatrix::from_fn(tau, m, |_, _| complex_gaussian(&mut rng, 1.0));
        let y = CVector::from_fn(tau, |_, _| complex_gaussian(&mut rng, 1.0));
        let r = omp_matrix(&a, &y, tau, 0.0).unwrap();
        check(
            "residual monotone",
            r.residual_trace.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)),
        );
        let mut s = r.support.clone();
        s.sort_unstable();
        s.dedup();
        check("no reselection", s.len() == r.support.len());

        let (rows, cols) = (rng.gen_range(1..6), rng.gen_range(1..9));
        let h = CMatrix::from_fn(rows, cols, |_, _| complex_gaussian(&mut rng, 1.0));
        let v = vec_matrix(&h);
        let column_major = (0..rows * cols).all(|i| v[i] == h[(i % rows, i / rows)]);
        check("vec/unvec", column_major && unvec(&v, rows, cols).as_ref() == Some(&h));

        let n_t = rng.gen_range(2..24);
        let n_r = rng.gen_range(1..4);
        let center = Point::from_polar(rng.gen_range(2.0..15.0), rng.gen_range(-1.0..1.0));
        let geom = ScenarioGeometry::new(n_t, n_r, FC, center, 0.0).unwrap();
        let cb = dpss_codebook(&geom, center.x, center.y, CompensationModel::Exact).unwrap();
        let hc = CMatrix::from_fn(n_r, n_t, |_, _| complex_gaussian(&mut rng, 1.0));
        let p = profile_of(&hc, &cb).unwrap();
        check(
            "Parseval",
            (p.coefficient_energy - p.channel_energy).abs() <= 1e-10 * p.channel_energy,
        );

        let n = rng.gen_range(1..80);
        let w = rng.gen_range(0.01..0.49);
        let kernel = sinc_kernel(n, w).unwrap();
        let basis = dpss_sequences(&kernel).unwrap();
        let trace = 2.0 * w * n as f64;
        check(
            "kernel trace",
            (kernel.matrix.trace() - trace).abs() <= 1e-9 * trace.max(1.0),
        );
        check(
            "eigenvalue sum",
            (basis.eigenvalues.iter().sum::<f64>() - trace).abs() <= 1e-9 * trace.max(1.0),
        );
        let worst = (0..n)
            .map(|i| {
                let v = basis.vectors.column(i);
                (&kernel.matrix * v - v * basis.eigenvalues[i]).norm()
            })
            .fold(0.0, f64::max);
        check("eigenpair residual", worst <= 1e-8);
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "50 randomized instances per property, all hold".to_string()
        } else {
            format!("violated: {}", failures.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("orthogonality", orthogonality),
        ("sinc approximation", sinc_approximation),
        ("sparsification", sparsification),
        ("NMSE ordering and convergence", nmse_ordering),
        ("oversampling", oversampling),
        ("localization robustness", localization_robustness),
        ("table shape", table_shape),
        ("oracle equivalence", oracle_equivalence),
        ("property suites", property_suites),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {}: {} ({:.1}s) {}",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            o.detail
        );
    }
    println!("{} of 9 criteria pass", 9 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
