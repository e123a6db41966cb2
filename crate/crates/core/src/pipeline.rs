//! Two-step estimation (localize, then estimate in the DPSS eigen-codebook),
//! single-codebook baselines and sparsification diagnostics.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codebooks::{
    dpss_codebook, spherical_codebook, Codebook, CodebookKind, CompensationModel, DEFAULT_R_MAX, DEFAULT_R_MIN,
};
use crate::error::{Error, Result};
use crate::linalg::{cis, frobenius_sq, pinv, unvec, vec_matrix, CMatrix, CVector, C64};
use crate::model::{ChannelRealization, Point, ScenarioGeometry};
use crate::sensing::{effective_dictionary, generate_training, omp, tau_from_mu, MeasurementEnsemble, OmpResult};

/// `10 log10(||H_hat - H||^2 / ||H||^2)`; an exact estimate gives `-inf`.
pub fn nmse(h_hat: &CMatrix, h: &CMatrix) -> Result<f64> {
    Ok(10.0 * nmse_linear(h_hat, h)?.log10())
}

pub fn nmse_linear(h_hat: &CMatrix, h: &CMatrix) -> Result<f64> {
    if h_hat.shape() != h.shape() {
        return Err(Error::Dimension(format!(
            "estimate is {:?}, channel is {:?}",
            h_hat.shape(),
            h.shape()
        )));
    }
    let energy = frobenius_sq(h);
    if energy == 0.0 {
        return Err(Error::Domain("NMSE is undefined for a zero channel".into()));
    }
    Ok(frobenius_sq(&(h_hat - h)) / energy)
}

/// Stopping rule for the OMP residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ResidualBound {
    /// `eps = factor * ||y||`.
    Relative {
        factor: f64,
    },
    Absolute {
        epsilon: f64,
    },
    /// `eps^2 = s * (tau + sigmas * sqrt(tau))` with `s = sigma_n^2 + p`,
    /// where `p` is the expected per-slot power of channel components the
    /// codebook is not meant to capture. The unmodeled residual energy has
    /// mean `s tau` and standard deviation `s sqrt(tau)`.
    NoiseFloor {
        unmodeled_power: f64,
        sigmas: f64,
    },
}

impl Default for ResidualBound {
    fn default() -> Self {
        ResidualBound::Relative { factor: 1e-6 }
    }
}

impl ResidualBound {
    pub fn epsilon(&self, ensemble: &MeasurementEnsemble) -> f64 {
        match *self {
            ResidualBound::Relative { factor } => factor * ensemble.y().norm(),
            ResidualBound::Absolute { epsilon } => epsilon,
            ResidualBound::NoiseFloor {
                unmodeled_power,
                sigmas,
            } => {
                let tau = ensemble.tau() as f64;
                ((ensemble.noise_var() + unmodeled_power) * (tau + sigmas * tau.sqrt())).sqrt()
            }
        }
    }
}

/// How the UE centre for the eigen-codebook is obtained.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalizationMode {
    /// Candidate centre of the best polar-domain codeword.
    Coarse,
    /// Matched-filter search over candidate LoS channels, refined by zooming.
    #[default]
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    pub mu: f64,
    pub snr_db: f64,
    /// Oversampling rate of the DFT/polar codebooks.
    pub beta: f64,
    pub max_iters: usize,
    pub residual: ResidualBound,
    pub localization: LocalizationMode,
    /// Replace localization by the true centre displaced uniformly within a
    /// disc of this radius (metres).
    pub injected_error: Option<f64>,
    pub compensation: CompensationModel,
    pub r_min: f64,
    pub r_max: f64,
    /// Reconstruct the channel after every iteration.
    pub track_iterations: bool,
}

impl Default for EstimatorSettings {
    fn default() -> Self {
        EstimatorSettings {
            mu: 0.4,
            snr_db: 20.0,
            beta: 1.0,
            max_iters: 30,
            residual: ResidualBound::default(),
            localization: LocalizationMode::default(),
            injected_error: None,
            compensation: CompensationModel::default(),
            r_min: DEFAULT_R_MIN,
            r_max: DEFAULT_R_MAX,
            track_iterations: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizationReport {
    pub x_hat: f64,
    pub y_hat: f64,
    /// Distance to the true UE centre.
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    pub h_hat: CMatrix,
    #[serde(with = "crate::serde_ext::db")]
    pub nmse_db: f64,
    pub support: Vec<usize>,
    #[serde(with = "crate::serde_ext::db_vec")]
    pub per_iteration_nmse: Vec<f64>,
    pub localization: Option<LocalizationReport>,
    pub codebook_kind: CodebookKind,
    pub codebook_size: usize,
    /// The eigen-codebook could not be built; the estimate uses the polar codebook only.
    pub fallback: bool,
    pub rank_deficient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoarseLocation {
    pub x_hat: f64,
    pub y_hat: f64,
    pub index: usize,
}

/// Best polar-domain codeword by `|psi_j^H Phi^H y|^2`, with its candidate centre.
pub fn coarse_localize(ensemble: &MeasurementEnsemble, polar: &Codebook) -> Result<CoarseLocation> {
    if polar.kind() != CodebookKind::Spherical {
        return Err(Error::Domain(format!(
            "coarse localization needs a spherical codebook, got {}",
            polar.kind().name()
        )));
    }
    let a = effective_dictionary(ensemble, polar)?;
    let index = best_atom(&a, ensemble.y()).ok_or_else(|| Error::Domain("empty codebook".into()))?;
    let c = polar.ue_center(index).expect("spherical codewords carry a UE centre");
    Ok(CoarseLocation {
        x_hat: c.x,
        y_hat: c.y,
        index,
    })
}

fn best_atom(a: &CMatrix, y: &CVector) -> Option<usize> {
    let corr = a.ad_mul(y);
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in corr.iter().enumerate() {
        let v = c.norm_sqr();
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((j, v));
        }
    }
    best.map(|(j, _)| j)
}

/// Unit-norm `vec(H_LoS)` for a UE centred at `center` with the geometry's orientation.
pub fn los_vector(geom: &ScenarioGeometry, center: Point) -> CVector {
    let (s, c) = geom.ue_rotation.sin_cos();
    let offsets = geom.ue_offsets();
    let n_r = offsets.len();
    let k = geom.wavenumber;
    let mut v = CVector::from_fn(geom.n_t() * n_r, |idx, _| {
        let bs = geom.bs_elements[idx / n_r];
        let d = offsets[idx % n_r];
        let ue = Point::new(center.x + d * c, center.y + d * s);
        let dist = bs.distance(&ue);
        cis(-k * dist) / dist
    });
    let n = v.norm();
    v.unscale_mut(n);
    v
}

/// Matched-filter UE localization over the LoS manifold.
///
/// Scans `2 N_T` points in `sin(theta)` and 24 points in `1/r` over
/// `[1/r_max, 1/r_min]`, then zooms on a 7x7 local grid eight times with
/// halving spans.
pub fn refine_location(
    ensemble: &MeasurementEnsemble,
    geom: &ScenarioGeometry,
    r_min: f64,
    r_max: f64,
) -> Result<Point> {
    if !(r_min > 0.0 && r_max > r_min) {
        return Err(Error::Domain(format!("distance range [{r_min}, {r_max}]")));
    }
    if ensemble.phi().ncols() != geom.n_t() * geom.n_r() {
        return Err(Error::Dimension("ensemble does not match the geometry".into()));
    }
    let z = ensemble.phi().ad_mul(ensemble.y());
    let score = |s: f64, q: f64| -> f64 {
        let r = 1.0 / q;
        let p = Point::new(r * s, r * (1.0 - s * s).sqrt());
        los_vector(geom, p).dotc(&z).norm()
    };
    let n_s = 2 * geom.n_t();
    let n_q = 24;
    let (q_lo, q_hi) = (1.0 / r_max, 1.0 / r_min);
    let lin = |a: f64, b: f64, n: usize, i: usize| {
        if n == 1 {
            a
        } else {
            a + (b - a) * i as f64 / (n - 1) as f64
        }
    };
    let mut best = (f64::NEG_INFINITY, 0.0, q_lo);
    for i in 0..n_s {
        let s = lin(-0.98, 0.98, n_s, i);
        for j in 0..n_q {
            let q = lin(q_lo, q_hi, n_q, j);
            let v = score(s, q);
            if v > best.0 {
                best = (v, s, q);
            }
        }
    }
    let (mut ds, mut dq) = (1.96 / (n_s - 1) as f64, (q_hi - q_lo) / (n_q - 1) as f64);
    for _ in 0..8 {
        let (_, s0, q0) = best;
        for i in 0..7 {
            let s = s0 - ds + ds * i as f64 / 3.0;
            for j in 0..7 {
                let q = q0 - dq + dq * j as f64 / 3.0;
                if s.abs() >= 0.999 || q <= q_lo / 2.0 || q > 2.0 * q_hi {
                    continue;
                }
                let v = score(s, q);
                if v > best.0 {
                    best = (v, s, q);
                }
            }
        }
        ds /= 2.0;
        dq /= 2.0;
    }
    let (_, s, q) = best;
    Ok(Point::new(s / q, (1.0 - s * s).sqrt() / q))
}

/// Point uniformly distributed in the disc of radius `radius` around `center`.
pub fn perturb_in_disc(center: Point, radius: f64, seed: u64) -> Point {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = radius * rng.gen::<f64>().sqrt();
    let phi = rng.gen::<f64>() * TAU;
    Point::new(center.x + rho * phi.cos(), center.y + rho * phi.sin())
}

fn check_dims(h: &ChannelRealization, codebook: &Codebook) -> Result<()> {
    if codebook.n_t() != h.n_t() || codebook.n_r() != h.n_r() {
        return Err(Error::Dimension(format!(
            "codebook is for {}x{} channels, channel is {}x{}",
            codebook.n_r(),
            codebook.n_t(),
            h.n_r(),
            h.n_t()
        )));
    }
    Ok(())
}

fn training(h: &ChannelRealization, settings: &EstimatorSettings, seed: u64) -> Result<MeasurementEnsemble> {
    let tau = tau_from_mu(settings.mu, h.n_t() * h.n_r())?;
    generate_training(h, tau, settings.snr_db, seed)
}

fn iterate_nmse(result: &OmpResult, codebook: &Codebook, h: &CMatrix) -> Result<Vec<f64>> {
    (0..result.path.len())
        .map(|i| {
            let x = result.iterate(i).expect("path index in range");
            let est = unvec(&codebook.synthesize(&x)?, h.nrows(), h.ncols()).expect("codebook dimension");
            nmse(&est, h)
        })
        .collect()
}

fn estimate_of(sparse: &CVector, codebook: &Codebook, h: &CMatrix) -> Result<CMatrix> {
    Ok(unvec(&codebook.synthesize(sparse)?, h.nrows(), h.ncols()).expect("codebook dimension"))
}

/// OMP in a single codebook, with its own training.
pub fn estimate_baseline(
    h: &ChannelRealization,
    codebook: &Codebook,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<EstimationReport> {
    check_dims(h, codebook)?;
    let ensemble = training(h, settings, seed)?;
    estimate_baseline_with(&ensemble, h, codebook, settings)
}

/// OMP in a single codebook under given training.
pub fn estimate_baseline_with(
    ensemble: &MeasurementEnsemble,
    h: &ChannelRealization,
    codebook: &Codebook,
    settings: &EstimatorSettings,
) -> Result<EstimationReport> {
    check_dims(h, codebook)?;
    let eps = settings.residual.epsilon(ensemble);
    let result = omp(ensemble, codebook, settings.max_iters, eps)?;
    let h_hat = estimate_of(&result.sparse_vector, codebook, &h.h_full)?;
    let per_iteration_nmse = if settings.track_iterations {
        iterate_nmse(&result, codebook, &h.h_full)?
    } else {
        Vec::new()
    };
    Ok(EstimationReport {
        nmse_db: nmse(&h_hat, &h.h_full)?,
        h_hat,
        support: result.support,
        per_iteration_nmse,
        localization: None,
        codebook_kind: codebook.kind(),
        codebook_size: codebook.len(),
        fallback: false,
        rank_deficient: result.rank_deficient,
    })
}

/// Two-step estimation with its own training and polar codebook.
pub fn estimate_two_step(
    h: &ChannelRealization,
    geom: &ScenarioGeometry,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<EstimationReport> {
    let polar = spherical_codebook(geom, settings.beta, settings.r_min, settings.r_max)?;
    let ensemble = training(h, settings, seed)?;
    estimate_two_step_with(&ensemble, h, geom, &polar, settings, seed)
}

/// Two-step estimation under given training.
///
/// Iteration 1 is the least-squares fit of the best polar-domain codeword;
/// iterations `2..=I` are OMP in the eigen-codebook built at the estimated
/// UE centre. `seed` is only used to draw the injected localization error.
pub fn estimate_two_step_with(
    ensemble: &MeasurementEnsemble,
    h: &ChannelRealization,
    geom: &ScenarioGeometry,
    polar: &Codebook,
    settings: &EstimatorSettings,
    seed: u64,
) -> Result<EstimationReport> {
    check_dims(h, polar)?;
    if settings.max_iters == 0 {
        return Err(Error::Domain("iteration cap must be at least 1".into()));
    }
    let truth = &h.h_full;
    let coarse = coarse_localize(ensemble, polar)?;

    let a = effective_dictionary(ensemble, polar)?;
    let col = a.column(coarse.index);
    let coef = col.dotc(ensemble.y()) / C64::new(col.norm_squared(), 0.0);
    let mut first = CVector::zeros(polar.len());
    first[coarse.index] = coef;
    let first_hat = estimate_of(&first, polar, truth)?;
    let first_nmse = nmse(&first_hat, truth)?;

    let center = match (settings.injected_error, settings.localization) {
        (Some(radius), _) => perturb_in_disc(geom.ue_center, radius, seed ^ 0x5bd1_e995),
        (None, LocalizationMode::Coarse) => Point::new(coarse.x_hat, coarse.y_hat),
        (None, LocalizationMode::Refined) => refine_location(ensemble, geom, settings.r_min, settings.r_max)?,
    };
    let localization = Some(LocalizationReport {
        x_hat: center.x,
        y_hat: center.y,
        error: center.distance(&geom.ue_center),
    });

    let eigen = match dpss_codebook(geom, center.x, center.y, settings.compensation) {
        Ok(cb) => cb,
        Err(Error::Domain(_)) => {
            let mut report = estimate_baseline_with(ensemble, h, polar, settings)?;
            report.localization = localization;
            report.fallback = true;
            return Ok(report);
        }
        Err(e) => return Err(e),
    };

    let mut per_iteration_nmse = vec![first_nmse];
    if settings.max_iters == 1 {
        return Ok(EstimationReport {
            h_hat: first_hat,
            nmse_db: first_nmse,
            support: vec![coarse.index],
            per_iteration_nmse,
            localization,
            codebook_kind: CodebookKind::Spherical,
            codebook_size: polar.len(),
            fallback: false,
            rank_deficient: false,
        });
    }

    let eps = settings.residual.epsilon(ensemble);
    let result = omp(ensemble, &eigen, settings.max_iters - 1, eps)?;
    if result.iterations_used == 0 {
        return Ok(EstimationReport {
            h_hat: first_hat,
            nmse_db: first_nmse,
            support: vec![coarse.index],
            per_iteration_nmse,
            localization,
            codebook_kind: CodebookKind::Spherical,
            codebook_size: polar.len(),
            fallback: false,
            rank_deficient: false,
        });
    }
    let h_hat = estimate_of(&result.sparse_vector, &eigen, truth)?;
    if settings.track_iterations {
        per_iteration_nmse.extend(iterate_nmse(&result, &eigen, truth)?);
    } else {
        per_iteration_nmse.clear();
    }
    Ok(EstimationReport {
        nmse_db: nmse(&h_hat, truth)?,
        h_hat,
        support: result.support,
        per_iteration_nmse,
        localization,
        codebook_kind: CodebookKind::Dpss,
        codebook_size: eigen.len(),
        fallback: false,
        rank_deficient: result.rank_deficient,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsificationProfile {
    /// `|h_tilde|`, sorted descending.
    pub magnitudes: Vec<f64>,
    /// Fraction of `||h_tilde||^2` held by the largest `k + 1` coefficients.
    pub cumulative_energy: Vec<f64>,
    pub coefficient_energy: f64,
    pub channel_energy: f64,
}

impl SparsificationProfile {
    /// Smallest number of coefficients holding at least `fraction` of the energy.
    pub fn count_for_fraction(&self, fraction: f64) -> usize {
        self.cumulative_energy
            .iter()
            .position(|&c| c >= fraction - 1e-12)
            .map_or(self.cumulative_energy.len(), |p| p + 1)
    }

    /// Energy fraction held by the largest `k` coefficients.
    pub fn fraction_in_top(&self, k: usize) -> f64 {
        match k {
            0 => 0.0,
            _ => self.cumulative_energy[(k - 1).min(self.cumulative_energy.len() - 1)],
        }
    }
}

fn is_unitary(codebook: &Codebook) -> bool {
    if codebook.len() != codebook.dim() {
        return false;
    }
    match codebook.factors() {
        Some(f) => {
            let orth = |m: &CMatrix| (m.ad_mul(m) - CMatrix::identity(m.ncols(), m.ncols())).camax() < 1e-10;
            f.tx.nrows() == f.tx.ncols() && f.rx.nrows() == f.rx.ncols() && orth(&f.tx) && orth(&f.rx)
        }
        None => codebook.kind() == CodebookKind::Dpss,
    }
}

/// Coefficients `Psi^+ vec(H)`; the adjoint is used for unitary codebooks.
pub fn sparse_coefficients(h: &CMatrix, codebook: &Codebook) -> Result<CVector> {
    if codebook.is_empty() {
        return Err(Error::Domain("empty codebook".into()));
    }
    if h.nrows() != codebook.n_r() || h.ncols() != codebook.n_t() {
        return Err(Error::Dimension(format!(
            "codebook is for {}x{} channels, channel is {}x{}",
            codebook.n_r(),
            codebook.n_t(),
            h.nrows(),
            h.ncols()
        )));
    }
    let v = vec_matrix(h);
    if is_unitary(codebook) {
        return Ok(match codebook.factors() {
            Some(f) => {
                let x = f.rx.adjoint() * h * f.tx.conjugate();
                CVector::from_iterator(f.pairs.len(), f.pairs.iter().map(|&(i, j)| x[(j, i)]))
            }
            None => codebook.matrix().ad_mul(&v),
        });
    }
    let fail = || Error::Computation("codebook pseudo-inverse failed".into());
    match codebook.factors() {
        // pinv(A kron B) = pinv(A) kron pinv(B); valid when every pair occurs once.
        Some(f) if f.pairs.len() == f.tx.ncols() * f.rx.ncols() && distinct_pairs(&f.pairs) => {
            let pt = pinv(&f.tx).ok_or_else(fail)?;
            let pr = pinv(&f.rx).ok_or_else(fail)?;
            let x = pr * h * pt.transpose();
            Ok(CVector::from_iterator(
                f.pairs.len(),
                f.pairs.iter().map(|&(i, j)| x[(j, i)]),
            ))
        }
        _ => Ok(pinv(codebook.matrix()).ok_or_else(fail)? * v),
    }
}

fn distinct_pairs(pairs: &[(usize, usize)]) -> bool {
    let mut p = pairs.to_vec();
    p.sort_unstable();
    p.windows(2).all(|w| w[0] != w[1])
}

/// Sorted coefficient magnitudes and cumulative energy of `Psi^+ vec(H)`.
pub fn sparsification_profile(h: &ChannelRealization, codebook: &Codebook) -> Result<SparsificationProfile> {
    profile_of(&h.h_full, codebook)
}

pub fn profile_of(h: &CMatrix, codebook: &Codebook) -> Result<SparsificationProfile> {
    let coeffs = sparse_coefficients(h, codebook)?;
    let mut magnitudes: Vec<f64> = coeffs.iter().map(|c| c.norm()).collect();
    magnitudes.sort_by(|a, b| b.total_cmp(a));
    let coefficient_energy: f64 = magnitudes.iter().map(|m| m * m).sum();
    let mut acc = 0.0;
    let cumulative_energy = magnitudes
        .iter()
        .map(|m| {
            acc += m * m;
            if coefficient_energy > 0.0 {
                acc / coefficient_energy
            } else {
                1.0
            }
        })
        .collect();
    Ok(SparsificationProfile {
        magnitudes,
        cumulative_energy,
        coefficient_energy,
        channel_energy: frobenius_sq(h),
    })
}

/// `|Psi^H Psi|` entrywise.
pub fn gram_map(codebook: &Codebook) -> DMatrix<f64> {
    let m = codebook.len();
    match codebook.factors() {
        Some(f) => {
            let gt = f.tx.ad_mul(&f.tx);
            let gr = f.rx.ad_mul(&f.rx);
            DMatrix::from_fn(m, m, |a, b| {
                let (i, j) = f.pairs[a];
                let (k, l) = f.pairs[b];
                (gt[(i, k)] * gr[(j, l)]).norm()
            })
        }
        None => {
            let psi = codebook.matrix();
            psi.ad_mul(psi).map(|z| z.norm())
        }
    }
}

/// Largest off-diagonal entry of a Gram map.
pub fn max_coherence(gram: &DMatrix<f64>) -> f64 {
    let mut best = 0.0f64;
    for ((i, j), v) in gram
        .iter()
        .enumerate()
        .map(|(k, v)| ((k % gram.nrows(), k / gram.nrows()), v))
    {
        if i != j {
            best = best.max(*v);
        }
    }
    best
}

/// Largest deviation of `Psi^H Psi` from the identity.
pub fn max_gram_deviation(codebook: &Codebook) -> f64 {
    let m = codebook.len();
    match codebook.factors() {
        Some(f) => {
            let gt = f.tx.ad_mul(&f.tx);
            let gr = f.rx.ad_mul(&f.rx);
            let mut worst = 0.0f64;
            for a in 0..m {
                let (i, j) = f.pairs[a];
                for b in 0..m {
                    let (k, l) = f.pairs[b];
                    let target = if a == b { 1.0 } else { 0.0 };
                    worst = worst.max((gt[(i, k)] * gr[(j, l)] - C64::new(target, 0.0)).norm());
                }
            }
            worst
        }
        None => {
            let psi = codebook.matrix();
            (psi.ad_mul(psi) - CMatrix::identity(m, m)).camax()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codebooks::dft_codebook;
    use crate::model::{los_channel, rician_channel};
    use crate::sensing::measure_with_beams;

    fn small_geom(center: Point) -> ScenarioGeometry {
        ScenarioGeometry::new(16, 2, 28e9, center, 0.0).unwrap()
    }

    #[test]
    fn nmse_identities() {
        let g = small_geom(Point::new(0.3, 2.0));
        let h = los_channel(&g);
        assert_eq!(nmse(&h, &h).unwrap(), f64::NEG_INFINITY);
        assert_eq!(nmse(&CMatrix::zeros(2, 16), &h).unwrap(), 0.0);
        assert!(nmse(&(&h * C64::new(2.0, 0.0)), &h).unwrap().abs() < 1e-12);
        assert!(nmse(&h, &CMatrix::zeros(2, 16)).is_err());
        assert!(nmse(&CMatrix::zeros(3, 16), &h).is_err());
    }

    #[test]
    fn report_json_round_trip_keeps_sentinel() {
        let report = EstimationReport {
            h_hat: CMatrix::identity(2, 2),
            nmse_db: f64::NEG_INFINITY,
            support: vec![3, 1],
            per_iteration_nmse: vec![-3.0, f64::NEG_INFINITY],
            localization: Some(LocalizationReport {
                x_hat: 1.0,
                y_hat: 2.0,
                error: 0.1,
            }),
            codebook_kind: CodebookKind::Dpss,
            codebook_size: 4,
            fallback: false,
            rank_deficient: false,
        };
        let s = serde_json::to_string(&report).unwrap();
        assert!(s.contains("\"nmse_db\":\"-inf\""));
        let back: EstimationReport = serde_json::from_str(&s).unwrap();
        assert_eq!(back, report);
    }

    /// All `N_T N_R` pairs of DFT beams, so that `Phi` is unitary.
    fn orthonormal_training(h: &CMatrix) -> MeasurementEnsemble {
        let (n_r, n_t) = h.shape();
        let tau = n_t * n_r;
        let f = CMatrix::from_fn(n_t, tau, |m, t| {
            cis(TAU * ((t / n_r) * m) as f64 / n_t as f64) / (n_t as f64).sqrt()
        });
        let w = CMatrix::from_fn(n_r, tau, |n, t| {
            cis(TAU * ((t % n_r) * n) as f64 / n_r as f64) / (n_r as f64).sqrt()
        });
        measure_with_beams(h, f, w, f64::INFINITY, 0).unwrap()
    }

    #[test]
    fn coarse_localization_matches_exhaustive_scan() {
        let g0 = small_geom(Point::new(0.0, 5.0));
        let polar = spherical_codebook(&g0, 1.0, 1.0, 20.0).unwrap();
        for idx in [5, 37, 50] {
            let target = polar.ue_center(idx).unwrap();
            let g = g0.with_ue_center(target).unwrap();
            let h = los_channel(&g);
            let e = orthonormal_training(&h);
            let phi_gram = e.phi().ad_mul(e.phi());
            assert!((phi_gram - CMatrix::identity(32, 32)).camax() < 1e-12);
            let loc = coarse_localize(&e, &polar).unwrap();
            let v = vec_matrix(&h);
            let scan = (0..polar.len())
                .map(|j| polar.column(j).dotc(&v).norm())
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |b, (j, x)| if x > b.1 { (j, x) } else { b });
            assert_eq!(loc.index, scan.0);
            assert!(Point::new(loc.x_hat, loc.y_hat).distance(&target) < 1e-12, "{idx}");
        }
        let h = los_channel(&g0);
        assert!(coarse_localize(&orthonormal_training(&h), &dft_codebook(16, 2, 1.0).unwrap()).is_err());
    }

    #[test]
    fn permuted_codebook_permutes_index() {
        let g = small_geom(Point::new(-0.5, 4.0));
        let polar = spherical_codebook(&g, 1.0, 1.0, 20.0).unwrap();
        let h = rician_channel(&g, 13.0, 3).unwrap();
        let e = generate_training(&h, 20, 20.0, 4).unwrap();
        let loc = coarse_localize(&e, &polar).unwrap();
        let order: Vec<usize> = (0..polar.len()).rev().collect();
        let p = polar.permuted(&order).unwrap();
        let loc2 = coarse_localize(&e, &p).unwrap();
        assert_eq!(order[loc2.index], loc.index);
        assert_eq!((loc2.x_hat, loc2.y_hat), (loc.x_hat, loc.y_hat));
    }

    #[test]
    fn refined_localization_is_close_for_clean_los() {
        let truth = Point::from_polar(2.5, 0.4);
        let g = ScenarioGeometry::new(64, 2, 28e9, truth, 0.0).unwrap();
        let h = rician_channel(&g, f64::INFINITY, 0).unwrap();
        let exact = refine_location(&orthonormal_training(&h.h_full), &g, 1.0, 20.0).unwrap();
        assert!(exact.distance(&truth) < 1e-3, "{exact:?}");
        let e = generate_training(&h, 64, f64::INFINITY, 2).unwrap();
        let p = refine_location(&e, &g, 1.0, 20.0).unwrap();
        assert!((p.angle() - truth.angle()).abs() < 1e-2, "{p:?}");
        assert!((p.norm() / truth.norm() - 1.0).abs() < 0.1, "{p:?}");
    }

    #[test]
    fn one_iteration_equals_spherical_single_atom() {
        let g = small_geom(Point::from_polar(7.0, -0.3));
        let h = rician_channel(&g, 13.0, 5).unwrap();
        let settings = EstimatorSettings {
            max_iters: 1,
            ..EstimatorSettings::default()
        };
        let polar = spherical_codebook(&g, 1.0, 1.0, 20.0).unwrap();
        let two = estimate_two_step(&h, &g, &settings, 8).unwrap();
        let base = estimate_baseline(&h, &polar, &settings, 8).unwrap();
        assert_eq!(two.support, base.support);
        assert!((two.nmse_db - base.nmse_db).abs() < 1e-9);
        assert_eq!(two.per_iteration_nmse.len(), 1);
    }

    #[test]
    fn injected_exact_location_recovers_pure_los() {
        let g = small_geom(Point::from_polar(4.0, 0.5));
        let h = rician_channel(&g, f64::INFINITY, 0).unwrap();
        let settings = EstimatorSettings {
            mu: 1.0,
            snr_db: f64::INFINITY,
            max_iters: 1 + 2,
            injected_error: Some(0.0),
            ..EstimatorSettings::default()
        };
        let r = estimate_two_step(&h, &g, &settings, 1).unwrap();
        assert_eq!(r.codebook_kind, CodebookKind::Dpss);
        assert!(r.nmse_db < -40.0, "{}", r.nmse_db);
        assert_eq!(r.localization.unwrap().error, 0.0);
    }

    #[test]
    fn unitary_codebook_full_training_is_exact() {
        let g = small_geom(Point::from_polar(3.0, 0.2));
        let h = rician_channel(&g, 13.0, 7).unwrap();
        let eigen = dpss_codebook(&g, g.ue_center.x, g.ue_center.y, CompensationModel::Exact).unwrap();
        let settings = EstimatorSettings {
            mu: 1.0,
            snr_db: f64::INFINITY,
            max_iters: 32,
            residual: ResidualBound::Absolute { epsilon: 0.0 },
            ..EstimatorSettings::default()
        };
        let r = estimate_baseline(&h, &eigen, &settings, 3).unwrap();
        assert!(r.nmse_db <= -80.0, "{}", r.nmse_db);
        assert_eq!(r.codebook_size, 32);
    }

    #[test]
    fn too_close_location_falls_back() {
        let g = ScenarioGeometry::new(64, 2, 28e9, Point::new(0.0, 2.0), 0.0).unwrap();
        let h = rician_channel(&g, 13.0, 1).unwrap();
        let polar = spherical_codebook(&g, 1.0, 1.0, 20.0).unwrap();
        let e = generate_training(&h, 40, 20.0, 2).unwrap();
        let mut settings = EstimatorSettings {
            max_iters: 4,
            ..EstimatorSettings::default()
        };
        // Aperture 64 * lambda / 2 is about 0.34 m; 0.1 m is inside the validity limit.
        let close = ScenarioGeometry::new(64, 2, 28e9, Point::new(0.0, 0.1), 0.0).unwrap();
        settings.injected_error = Some(0.0);
        let hc = rician_channel(&close, 13.0, 1).unwrap();
        let ec = generate_training(&hc, 40, 20.0, 2).unwrap();
        let r = estimate_two_step_with(&ec, &hc, &close, &polar, &settings, 0).unwrap();
        assert!(r.fallback);
        assert_eq!(r.codebook_kind, CodebookKind::Spherical);
        let ok = estimate_two_step_with(&e, &h, &g, &polar, &settings, 0).unwrap();
        assert!(!ok.fallback);
    }

    #[test]
    fn noise_floor_bound() {
        let g = small_geom(Point::new(0.0, 3.0));
        let h = rician_channel(&g, 13.0, 1).unwrap();
        let e = generate_training(&h, 10, 10.0, 1).unwrap();
        let b = ResidualBound::NoiseFloor {
            unmodeled_power: 0.5,
            sigmas: 0.0,
        };
        assert!((b.epsilon(&e) - (10.0 * (e.noise_var() + 0.5)).sqrt()).abs() < 1e-12);
        let b = ResidualBound::NoiseFloor {
            unmodeled_power: 0.5,
            sigmas: 2.0,
        };
        let expected = ((e.noise_var() + 0.5) * (10.0 + 2.0 * 10f64.sqrt())).sqrt();
        assert!((b.epsilon(&e) - expected).abs() < 1e-12);
        assert_eq!(
            ResidualBound::default().epsilon(&e),
            crate::sensing::default_epsilon(e.y())
        );
    }

    #[test]
    fn profiles() {
        let g = small_geom(Point::from_polar(3.0, 0.3));
        let h = rician_channel(&g, 13.0, 2).unwrap();
        let eigen = dpss_codebook(&g, g.ue_center.x, g.ue_center.y, CompensationModel::Exact).unwrap();
        let p = sparsification_profile(&h, &eigen).unwrap();
        assert!((p.coefficient_energy - p.channel_energy).abs() < 1e-10 * p.channel_energy);
        assert!((p.cumulative_energy.last().unwrap() - 1.0).abs() < 1e-12);
        assert!(p.magnitudes.windows(2).all(|w| w[0] >= w[1]));
        assert_eq!(p.fraction_in_top(0), 0.0);

        let polar = spherical_codebook(&g, 1.0, 1.0, 20.0).unwrap();
        let fast = sparse_coefficients(&h.h_full, &polar).unwrap();
        let dense = pinv(polar.matrix()).unwrap() * vec_matrix(&h.h_full);
        let rel = (fast - &dense).norm() / dense.norm();
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn gram_maps() {
        let g = small_geom(Point::new(0.2, 3.0));
        let eigen = dpss_codebook(&g, 0.2, 3.0, CompensationModel::Exact).unwrap();
        assert!(max_gram_deviation(&eigen) < 1e-10);
        let polar = spherical_codebook(&g, 1.0, 1.0, 20.0).unwrap();
        let gm = gram_map(&polar);
        assert!(gm.diagonal().iter().all(|d| (d - 1.0).abs() < 1e-12));
        assert!(max_coherence(&gm) > 0.1);
        let dense = polar.matrix().ad_mul(polar.matrix()).map(|z| z.norm());
        assert!((gm - dense).amax() < 1e-12);
    }

    #[test]
    fn baseline_with_fixed_beams_is_deterministic() {
        let g = small_geom(Point::new(0.1, 2.5));
        let h = rician_channel(&g, 13.0, 2).unwrap();
        let f = CMatrix::from_fn(16, 12, |m, t| cis(0.3 * (m * t) as f64) * 0.25);
        let w = CMatrix::from_fn(2, 12, |n, t| cis(0.7 * (n + t) as f64) / 2f64.sqrt());
        let e = measure_with_beams(&h.h_full, f, w, 25.0, 4).unwrap();
        let cb = dft_codebook(16, 2, 1.0).unwrap();
        let s = EstimatorSettings::default();
        assert_eq!(
            estimate_baseline_with(&e, &h, &cb, &s).unwrap(),
            estimate_baseline_with(&e, &h, &cb, &s).unwrap()
        );
    }
}
