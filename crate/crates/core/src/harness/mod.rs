//! Monte-Carlo experiment runner.
//!
//! # Seeding
//!
//! Every random draw is derived from `scenario.master_seed` with
//! [`derive_seed`]`(master, trial, stream)`:
//!
//! * the UE placement and the channel of trial `t` use streams
//!   [`PLACEMENT_STREAM`] and [`CHANNEL_STREAM`], so every sweep value sees
//!   the same channels;
//! * training beams and noise of trial `t` at sweep position `s` use stream
//!   `s`, and the injected localization error uses stream
//!   [`INJECTION_STREAM`] `- s`.
//!
//! NMSE is averaged over trials in the linear domain before conversion to dB.

mod cache;
mod config;
mod output;

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cache::CodebookCache;
pub use config::{
    EstimatorKind, ExperimentConfig, OmpConfig, OutputConfig, ScenarioConfig, StopRule, SweepConfig, SweepVariable,
    TwoStepConfig,
};
pub use output::{emit_results, load_results, to_json_document, SweepResult, SweepRow, CSV_HEADER};

use crate::codebooks::{dpss_codebook, Codebook, CodebookKind};
use crate::error::{Error, Result};
use crate::model::{rician_channel, ChannelRealization, Point, ScenarioGeometry};
use crate::pipeline::{
    estimate_baseline_with, estimate_two_step_with, gram_map, nmse_linear, profile_of, EstimationReport,
    EstimatorSettings, SparsificationProfile,
};
use crate::sensing::{generate_training, tau_from_mu};

pub const PLACEMENT_STREAM: u64 = u64::MAX;
pub const CHANNEL_STREAM: u64 = u64::MAX - 1;
pub const INJECTION_STREAM: u64 = u64::MAX - 2;

/// Per-trial NMSE values below this are clamped (dB) before the spread is computed.
pub const NMSE_FLOOR_DB: f64 = -400.0;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(splitmix64(master) ^ trial) ^ stream)`.
pub fn derive_seed(master: u64, trial: u64, stream: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ trial) ^ stream)
}

fn to_db(lin: f64) -> f64 {
    10.0 * lin.log10()
}

/// UE placement and channel of trial `trial`.
pub fn draw_trial(cfg: &ExperimentConfig, trial: usize) -> Result<(ScenarioGeometry, ChannelRealization)> {
    let s = &cfg.scenario;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(s.master_seed, trial as u64, PLACEMENT_STREAM));
    let [r0, r1] = s.ue_distance_range_m;
    let [a0, a1] = s.ue_angle_range_deg;
    let r = if r1 > r0 { rng.gen_range(r0..r1) } else { r0 };
    let a = if a1 > a0 { rng.gen_range(a0..a1) } else { a0 };
    let center = Point::from_polar(r, a.to_radians());
    let geom = ScenarioGeometry::new(s.n_t, s.n_r, s.carrier_hz, center, s.ue_rotation)?;
    let h = rician_channel(&geom, s.k_db, derive_seed(s.master_seed, trial as u64, CHANNEL_STREAM))?;
    Ok((geom, h))
}

/// Parameters of one sweep point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointParams {
    pub mu: f64,
    pub max_iters: usize,
    pub dft_beta: f64,
    pub spherical_beta: f64,
    /// Oversampling of the polar codebook used for the first step.
    pub polar_beta: f64,
    pub injected_error: Option<f64>,
}

impl PointParams {
    pub fn from_config(cfg: &ExperimentConfig) -> Self {
        PointParams {
            mu: cfg.mu,
            max_iters: cfg.omp.max_iters,
            dft_beta: cfg.beta,
            spherical_beta: cfg.beta,
            polar_beta: cfg.beta,
            injected_error: cfg.two_step.injected_error_m,
        }
    }

    /// Parameters with `variable` set to `value`.
    pub fn with_value(cfg: &ExperimentConfig, variable: SweepVariable, value: f64) -> Self {
        let mut p = Self::from_config(cfg);
        let n = (cfg.scenario.n_t * cfg.scenario.n_r) as f64;
        match variable {
            SweepVariable::Mu => p.mu = value,
            SweepVariable::Iterations => p.max_iters = value as usize,
            SweepVariable::Beta => {
                p.dft_beta = value;
                p.spherical_beta = value;
                p.polar_beta = value;
            }
            SweepVariable::Epsilon => p.injected_error = Some(value),
            SweepVariable::CodebookSize => {
                let (dft, sph) = betas_for_size(value as usize, n as usize);
                p.dft_beta = dft;
                p.spherical_beta = sph;
            }
        }
        p
    }
}

/// Oversampling rates giving roughly `size` codewords: `sqrt(size / N)` for
/// the DFT codebook and `(size / N)^(1/4)` for the polar one, floored at 1.
pub fn betas_for_size(size: usize, n: usize) -> (f64, f64) {
    let ratio = size as f64 / n as f64;
    (ratio.sqrt().max(1.0), ratio.powf(0.25).max(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOutcome {
    pub estimator: EstimatorKind,
    pub codebook_size: usize,
    /// Linear NMSE after each iteration, one row per trial, held constant
    /// after the solver stops.
    pub traces: Vec<Vec<f64>>,
    pub fallbacks: usize,
    pub localization_errors: Vec<f64>,
    pub wall_time_s: f64,
}

impl EstimatorOutcome {
    pub fn trials(&self) -> usize {
        self.traces.len()
    }

    /// Per-trial linear NMSE after iteration `i` (1-based).
    pub fn at_iteration(&self, i: usize) -> Vec<f64> {
        self.traces.iter().map(|t| t[(i.max(1) - 1).min(t.len() - 1)]).collect()
    }

    pub fn final_values(&self) -> Vec<f64> {
        self.traces
            .iter()
            .map(|t| *t.last().expect("non-empty trace"))
            .collect()
    }

    /// `(mean dB, stddev dB)` at iteration `i`.
    pub fn stats_at(&self, i: usize) -> (f64, f64) {
        summarize(&self.at_iteration(i))
    }

    pub fn final_stats(&self) -> (f64, f64) {
        summarize(&self.final_values())
    }

    /// Mean NMSE in dB for every iteration.
    pub fn mean_trace_db(&self) -> Vec<f64> {
        let len = self.traces.first().map_or(0, Vec::len);
        (1..=len).map(|i| self.stats_at(i).0).collect()
    }

    /// First iteration after which the mean trace stays within `tol_db` of
    /// its final value.
    pub fn iterations_to_converge(&self, tol_db: f64) -> usize {
        iterations_to_converge(&self.mean_trace_db(), tol_db)
    }
}

/// First 1-based index `i` such that every `trace_db[j]` with `j >= i`
/// lies within `tol_db` of the last entry.
pub fn iterations_to_converge(trace_db: &[f64], tol_db: f64) -> usize {
    let Some(&last) = trace_db.last() else { return 0 };
    let close = |v: f64| v == last || (v - last).abs() <= tol_db;
    trace_db.len() - trace_db.iter().rev().take_while(|&&v| close(v)).count() + 1
}

/// Linear-domain mean in dB and the sample spread of the per-trial dB values.
pub fn summarize(linear: &[f64]) -> (f64, f64) {
    let n = linear.len() as f64;
    let mean = linear.iter().sum::<f64>() / n;
    let db: Vec<f64> = linear.iter().map(|&l| to_db(l).max(NMSE_FLOOR_DB)).collect();
    let m = db.iter().sum::<f64>() / n;
    let std = if linear.len() > 1 {
        (db.iter().map(|d| (d - m) * (d - m)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (to_db(mean), std)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointOutcome {
    pub params_mu: f64,
    pub params_max_iters: usize,
    pub estimators: Vec<EstimatorOutcome>,
}

impl PointOutcome {
    pub fn get(&self, kind: EstimatorKind) -> Option<&EstimatorOutcome> {
        self.estimators.iter().find(|e| e.estimator == kind)
    }
}

struct TrialOutput {
    traces: Vec<Vec<f64>>,
    sizes: Vec<usize>,
    fallback: Vec<bool>,
    loc_error: Vec<Option<f64>>,
    seconds: Vec<f64>,
}

fn settings_for(cfg: &ExperimentConfig, p: &PointParams, beta: f64) -> EstimatorSettings {
    let n = cfg.scenario.n_t * cfg.scenario.n_r;
    EstimatorSettings {
        mu: p.mu,
        snr_db: cfg.snr_db,
        beta,
        max_iters: p.max_iters,
        residual: cfg.omp.stop.residual_bound(n, cfg.scenario.k_db),
        localization: cfg.two_step.localization,
        injected_error: p.injected_error,
        compensation: cfg.two_step.compensation,
        r_min: cfg.two_step.r_min,
        r_max: cfg.two_step.r_max,
        track_iterations: true,
    }
}

fn padded_trace(report: &EstimationReport, h: &ChannelRealization, len: usize) -> Result<Vec<f64>> {
    let mut t: Vec<f64> = report
        .per_iteration_nmse
        .iter()
        .map(|db| 10f64.powf(db / 10.0))
        .collect();
    if t.is_empty() {
        t.push(nmse_linear(&report.h_hat, &h.h_full)?);
    }
    let last = *t.last().expect("non-empty");
    t.resize(len.max(t.len()), last);
    t.truncate(len.max(1));
    Ok(t)
}

fn run_trial(
    cfg: &ExperimentConfig,
    p: &PointParams,
    estimators: &[EstimatorKind],
    trial: usize,
    stream: u64,
    cache: &CodebookCache,
) -> Result<TrialOutput> {
    let (geom, h) = draw_trial(cfg, trial)?;
    let master = cfg.scenario.master_seed;
    let tau = tau_from_mu(p.mu, h.n_t() * h.n_r())?;
    let ensemble = generate_training(&h, tau, cfg.snr_db, derive_seed(master, trial as u64, stream))?;
    let mut out = TrialOutput {
        traces: Vec::new(),
        sizes: Vec::new(),
        fallback: Vec::new(),
        loc_error: Vec::new(),
        seconds: Vec::new(),
    };
    let (r_min, r_max) = (cfg.two_step.r_min, cfg.two_step.r_max);
    for &kind in estimators {
        let start = Instant::now();
        let (report, size) = match kind {
            EstimatorKind::Dft => {
                let cb = cache.dft(&geom, p.dft_beta)?;
                let s = settings_for(cfg, p, p.dft_beta);
                (estimate_baseline_with(&ensemble, &h, &cb, &s)?, cb.len())
            }
            EstimatorKind::Spherical => {
                let cb = cache.spherical(&geom, p.spherical_beta, r_min, r_max)?;
                let s = settings_for(cfg, p, p.spherical_beta);
                (estimate_baseline_with(&ensemble, &h, &cb, &s)?, cb.len())
            }
            EstimatorKind::DpssTwoStep => {
                let polar = cache.spherical(&geom, p.polar_beta, r_min, r_max)?;
                let s = settings_for(cfg, p, p.polar_beta);
                let seed = derive_seed(master, trial as u64, INJECTION_STREAM.wrapping_sub(stream));
                let r = estimate_two_step_with(&ensemble, &h, &geom, &polar, &s, seed)?;
                (r, geom.n_t() * geom.n_r())
            }
            EstimatorKind::DpssOracle => {
                let s = settings_for(cfg, p, p.polar_beta);
                let c = geom.ue_center;
                match dpss_codebook(&geom, c.x, c.y, cfg.two_step.compensation) {
                    Ok(cb) => (estimate_baseline_with(&ensemble, &h, &cb, &s)?, cb.len()),
                    Err(Error::Domain(_)) => {
                        let polar = cache.spherical(&geom, p.polar_beta, r_min, r_max)?;
                        let mut r = estimate_baseline_with(&ensemble, &h, &polar, &s)?;
                        r.fallback = true;
                        (r, geom.n_t() * geom.n_r())
                    }
                    Err(e) => return Err(e),
                }
            }
        };
        out.seconds.push(start.elapsed().as_secs_f64());
        out.traces.push(padded_trace(&report, &h, p.max_iters)?);
        out.sizes.push(size);
        out.fallback.push(report.fallback);
        out.loc_error.push(report.localization.map(|l| l.error));
    }
    Ok(out)
}

/// Run all trials of one sweep point. `stream` selects the training seeds.
pub fn run_point(
    cfg: &ExperimentConfig,
    params: &PointParams,
    estimators: &[EstimatorKind],
    stream: u64,
    cache: &CodebookCache,
) -> Result<PointOutcome> {
    let trials = cfg.scenario.trials;
    let job = |t: usize| run_trial(cfg, params, estimators, t, stream, cache);
    #[cfg(feature = "parallel")]
    let outputs: Vec<TrialOutput> = {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(job).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let outputs: Vec<TrialOutput> = (0..trials).map(job).collect::<Result<_>>()?;

    let record = cfg.output.record_wall_time;
    let estimators = estimators
        .iter()
        .enumerate()
        .map(|(e, &kind)| EstimatorOutcome {
            estimator: kind,
            codebook_size: outputs[0].sizes[e],
            traces: outputs.iter().map(|o| o.traces[e].clone()).collect(),
            fallbacks: outputs.iter().filter(|o| o.fallback[e]).count(),
            localization_errors: outputs.iter().filter_map(|o| o.loc_error[e]).collect(),
            wall_time_s: if record {
                outputs.iter().map(|o| o.seconds[e]).sum()
            } else {
                0.0
            },
        })
        .collect();
    Ok(PointOutcome {
        params_mu: params.mu,
        params_max_iters: params.max_iters,
        estimators,
    })
}

/// Execute the configured sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    let cache = CodebookCache::new(cfg.cache_dir.clone());
    run_sweep_with(cfg, &cache)
}

pub fn run_sweep_with(cfg: &ExperimentConfig, cache: &CodebookCache) -> Result<SweepResult> {
    cfg.validate()?;
    let variable = cfg.sweep.variable;
    let values = &cfg.sweep.values;
    let mut rows = Vec::new();
    let row = |value: f64, e: &EstimatorOutcome, (mean, std): (f64, f64)| SweepRow {
        sweep_value: value,
        estimator: e.estimator,
        mean_nmse_db: mean,
        stddev_db: std,
        trials: e.trials(),
        codebook_size: e.codebook_size,
        wall_time_s: e.wall_time_s,
    };
    if variable == SweepVariable::Iterations {
        // Greedy iterates are nested, so one run at the largest budget yields
        // every smaller budget.
        let max = values.iter().cloned().fold(1.0, f64::max);
        let p = PointParams::with_value(cfg, variable, max);
        let point = run_point(cfg, &p, &cfg.estimators, 0, cache)?;
        for &v in values {
            for e in &point.estimators {
                rows.push(row(v, e, e.stats_at(v as usize)));
            }
        }
    } else {
        for (s, &v) in values.iter().enumerate() {
            let p = PointParams::with_value(cfg, variable, v);
            let point = run_point(cfg, &p, &cfg.estimators, s as u64, cache)?;
            for e in &point.estimators {
                rows.push(row(v, e, e.final_stats()));
            }
        }
    }
    Ok(SweepResult { variable, rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Scan {
    pub estimator: EstimatorKind,
    pub requested_size: usize,
    pub beta: f64,
    pub codebook_size: usize,
    #[serde(with = "crate::serde_ext::db")]
    pub mean_nmse_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub estimator: EstimatorKind,
    pub target_db: f64,
    /// `None` when no scanned size meets the target.
    pub required_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Result {
    pub targets: Vec<f64>,
    pub scans: Vec<Table1Scan>,
    pub rows: Vec<Table1Row>,
}

impl Table1Result {
    pub fn required(&self, estimator: EstimatorKind, target: f64) -> Option<usize> {
        self.rows
            .iter()
            .find(|r| r.estimator == estimator && r.target_db == target)
            .and_then(|r| r.required_size)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("estimator,target_db,required_size\n");
        for r in &self.rows {
            let size = r.required_size.map_or_else(|| "N/A".to_string(), |s| s.to_string());
            out.push_str(&format!("{},{},{}\n", r.estimator.name(), r.target_db, size));
        }
        out
    }
}

/// Smallest codebook size meeting each NMSE target.
///
/// DFT and polar codebooks are rebuilt for every size in `size_grid`
/// (ascending); the eigen-codebook, whose size is fixed at `N_T N_R`, is
/// evaluated once with the two-step estimator. Converged means use the
/// configured iteration budget.
pub fn table1_search(cfg: &ExperimentConfig, targets: &[f64], size_grid: &[usize]) -> Result<Table1Result> {
    cfg.validate()?;
    if size_grid.is_empty() {
        return Err(Error::Config("empty codebook size grid".into()));
    }
    if targets.is_empty() {
        return Err(Error::Config("no NMSE targets".into()));
    }
    let mut grid = size_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let cache = CodebookCache::new(cfg.cache_dir.clone());
    let n = cfg.scenario.n_t * cfg.scenario.n_r;
    let stream = 0;

    let mut scans = Vec::new();
    for &size in &grid {
        let p = PointParams::with_value(cfg, SweepVariable::CodebookSize, size as f64);
        let point = run_point(cfg, &p, &[EstimatorKind::Dft, EstimatorKind::Spherical], stream, &cache)?;
        for e in &point.estimators {
            let beta = match e.estimator {
                EstimatorKind::Dft => p.dft_beta,
                _ => p.spherical_beta,
            };
            scans.push(Table1Scan {
                estimator: e.estimator,
                requested_size: size,
                beta,
                codebook_size: e.codebook_size,
                mean_nmse_db: e.final_stats().0,
            });
        }
    }
    let p = PointParams::from_config(cfg);
    let point = run_point(cfg, &p, &[EstimatorKind::DpssTwoStep], stream, &cache)?;
    let dpss = &point.estimators[0];
    scans.push(Table1Scan {
        estimator: EstimatorKind::DpssTwoStep,
        requested_size: n,
        beta: cfg.beta,
        codebook_size: dpss.codebook_size,
        mean_nmse_db: dpss.final_stats().0,
    });

    let mut rows = Vec::new();
    for kind in [EstimatorKind::Dft, EstimatorKind::Spherical, EstimatorKind::DpssTwoStep] {
        for &target in targets {
            let required_size = scans
                .iter()
                .filter(|s| s.estimator == kind && s.mean_nmse_db <= target)
                .map(|s| s.codebook_size)
                .min();
            rows.push(Table1Row {
                estimator: kind,
                target_db: target,
                required_size,
            });
        }
    }
    Ok(Table1Result {
        targets: targets.to_vec(),
        scans,
        rows,
    })
}

/// Codebooks of all three kinds for trial `trial`; the eigen-codebook is
/// built at the true UE centre.
pub fn trial_codebooks(cfg: &ExperimentConfig, trial: usize) -> Result<(ChannelRealization, Vec<Codebook>)> {
    let (geom, h) = draw_trial(cfg, trial)?;
    let cache = CodebookCache::new(None);
    let c = geom.ue_center;
    let books = vec![
        (*cache.dft(&geom, cfg.beta)?).clone(),
        (*cache.spherical(&geom, cfg.beta, cfg.two_step.r_min, cfg.two_step.r_max)?).clone(),
        dpss_codebook(&geom, c.x, c.y, cfg.two_step.compensation)?,
    ];
    Ok((h, books))
}

/// Sparsification profiles of the trial channel in each codebook.
pub fn profile_report(cfg: &ExperimentConfig, trial: usize) -> Result<Vec<(CodebookKind, SparsificationProfile)>> {
    let (h, books) = trial_codebooks(cfg, trial)?;
    books
        .iter()
        .map(|cb| Ok((cb.kind(), profile_of(&h.h_full, cb)?)))
        .collect()
}

pub fn profile_csv(profiles: &[(CodebookKind, SparsificationProfile)]) -> String {
    let mut out = String::from("codebook,rank,magnitude,cumulative_energy\n");
    for (kind, p) in profiles {
        for (i, (m, c)) in p.magnitudes.iter().zip(&p.cumulative_energy).enumerate() {
            out.push_str(&format!("{},{},{},{}\n", kind.name(), i + 1, m, c));
        }
    }
    out
}

/// Gram map `|Psi^H Psi|` of one codebook kind for trial `trial`.
pub fn gram_report(cfg: &ExperimentConfig, kind: CodebookKind, trial: usize) -> Result<(Codebook, DMatrix<f64>)> {
    let (_, books) = trial_codebooks(cfg, trial)?;
    let cb = books
        .into_iter()
        .find(|b| b.kind() == kind)
        .expect("all kinds are built");
    let g = gram_map(&cb);
    Ok((cb, g))
}

pub fn gram_csv(g: &DMatrix<f64>) -> String {
    let mut out = String::with_capacity(g.len() * 8);
    for i in 0..g.nrows() {
        let row: Vec<String> = (0..g.ncols()).map(|j| format!("{}", g[(i, j)])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub use output::write_text;
