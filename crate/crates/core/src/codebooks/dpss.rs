//! DPSS eigen-codebook.
//!
//! Phase-compensating the BS-side auto-correlation `E[H^H H]` leaves, up to
//! a positive scale and an identity term, a real Toeplitz sinc kernel whose
//! eigenvectors are the discrete prolate spheroidal sequences. Same for the
//! UE side with the roles of the apertures swapped. The codebook is the
//! Kronecker product of the two compensated, conjugated bases.
//!
//! DPSS are computed from the symmetric tridiagonal matrix that commutes with
//! the sinc kernel. Its spectrum is simple and well separated, so every order
//! is resolved, including those whose kernel eigenvalues are below rounding.
//! The kernel eigenvalues are then Rayleigh quotients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Codebook, CodebookKind, CodebookParams, CodewordMeta, KroneckerFactors};
use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, C64};
use crate::model::ScenarioGeometry;

#[derive(Debug, Clone, PartialEq)]
pub struct SincKernel {
    pub matrix: DMatrix<f64>,
    /// Normalized half-bandwidth in cycles per element, in `(0, 1/2)`.
    pub half_bandwidth: f64,
}

impl SincKernel {
    pub fn len(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn sinc_entry(lag: i64, w: f64) -> f64 {
    if lag == 0 {
        2.0 * w
    } else {
        let l = lag as f64;
        (2.0 * PI * w * l).sin() / (PI * l)
    }
}

/// Toeplitz kernel `S[m, m'] = sin(2 pi w (m - m')) / (pi (m - m'))`, `S[m, m] = 2w`.
pub fn sinc_kernel(n: usize, w: f64) -> Result<SincKernel> {
    if n == 0 {
        return Err(Error::Domain("empty kernel".into()));
    }
    if !(w > 0.0 && w < 0.5) {
        return Err(Error::Domain(format!(
            "normalized half-bandwidth {w} outside (0, 1/2); the UE is too close for the paraxial kernel"
        )));
    }
    let row: Vec<f64> = (0..n as i64).map(|l| sinc_entry(l, w)).collect();
    let matrix = DMatrix::from_fn(n, n, |i, j| row[(i as i64 - j as i64).unsigned_abs() as usize]);
    Ok(SincKernel {
        matrix,
        half_bandwidth: w,
    })
}

/// Orthonormal DPSS basis, columns ordered by descending concentration.
#[derive(Debug, Clone, PartialEq)]
pub struct DpssBasis {
    pub vectors: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
}

pub fn dpss_sequences(kernel: &SincKernel) -> Result<DpssBasis> {
    let n = kernel.len();
    let w = kernel.half_bandwidth;
    let half = (n as f64 - 1.0) / 2.0;
    let cw = (2.0 * PI * w).cos();
    let mut tri = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        tri[(k, k)] = (half - k as f64).powi(2) * cw;
        if k + 1 < n {
            let off = (k + 1) as f64 * (n - k - 1) as f64 / 2.0;
            tri[(k, k + 1)] = off;
            tri[(k + 1, k)] = off;
        }
    }
    let eig = SymmetricEigen::try_new(tri, f64::EPSILON, 0).ok_or_else(|| {
        Error::Computation(format!(
            "tridiagonal eigensolver did not converge (n = {n}, half-bandwidth = {w})"
        ))
    })?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut vectors = DMatrix::<f64>::zeros(n, n);
    let mut eigenvalues = Vec::with_capacity(n);
    for (col, &k) in order.iter().enumerate() {
        let mut v: DVector<f64> = eig.eigenvectors.column(k).into_owned();
        let peak = v.amax();
        if let Some(first) = v.iter().find(|x| x.abs() > 1e-12 * peak) {
            if *first < 0.0 {
                v.neg_mut();
            }
        }
        let rq = v.dot(&(&kernel.matrix * &v));
        // Kernel eigenvalues decrease with order; clamp rounding-level inversions.
        let lam = eigenvalues.last().map_or(rq, |&prev: &f64| rq.min(prev));
        eigenvalues.push(lam);
        vectors.set_column(col, &v);
    }
    let worst = (0..n)
        .map(|k| {
            let v = vectors.column(k);
            (&kernel.matrix * v - v * eigenvalues[k]).norm()
        })
        .fold(0.0, f64::max);
    if worst.is_nan() || worst > 1e-8 {
        return Err(Error::Computation(format!(
            "DPSS eigenpair residual {worst:e} exceeds 1e-8 (n = {n}, half-bandwidth = {w})"
        )));
    }
    Ok(DpssBasis { vectors, eigenvalues })
}

/// `diag(exp(j kappa x_m^2 / (2 y)))`.
pub fn compensation_matrix(element_x: &[f64], y_hat: f64, wavenumber: f64) -> Result<CMatrix> {
    Ok(CMatrix::from_diagonal(&compensation_phases(
        element_x, y_hat, wavenumber,
    )?))
}

fn compensation_phases(element_x: &[f64], y_hat: f64, wavenumber: f64) -> Result<nalgebra::DVector<C64>> {
    if !(y_hat > 0.0 && y_hat.is_finite()) {
        return Err(Error::Domain(format!(
            "compensation range y = {y_hat} must be positive"
        )));
    }
    Ok(nalgebra::DVector::from_iterator(
        element_x.len(),
        element_x.iter().map(|&x| cis(wavenumber * x * x / (2.0 * y_hat))),
    ))
}

/// How the quadratic phase is removed before the DPSS basis is applied.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompensationModel {
    /// Second-order (Fresnel) phases `kappa x^2 / (2 y)` about broadside,
    /// with element coordinates taken relative to the other array's centre,
    /// and kernel frequency `L / (4 y)`.
    Paraxial,
    /// Exact distance from each element to the other array's centre, and
    /// the kernel frequency scaled by `cos^2(theta) / r` instead of `1 / y`.
    #[default]
    Exact,
}

/// Effective apertures `N lambda / 2` (BS, UE).
fn effective_apertures(geom: &ScenarioGeometry) -> (f64, f64) {
    let half = geom.wavelength / 2.0;
    (geom.n_t() as f64 * half, geom.n_r() as f64 * half)
}

/// Normalized kernel half-bandwidths `(w_T, w_R)` for a UE centred at `(x, y)`.
pub fn kernel_frequencies(geom: &ScenarioGeometry, x_hat: f64, y_hat: f64, model: CompensationModel) -> (f64, f64) {
    let (l_t, l_r) = effective_apertures(geom);
    let scale = match model {
        CompensationModel::Paraxial => 1.0 / y_hat,
        CompensationModel::Exact => {
            let r = x_hat.hypot(y_hat);
            y_hat * y_hat / (r * r * r)
        }
    };
    (l_r * scale / 4.0, l_t * scale / 4.0)
}

/// Build the DPSS eigen-codebook for an (estimated) UE centre `(x_hat, y_hat)`.
///
/// Codewords are ordered by descending product of the two kernel eigenvalues.
pub fn dpss_codebook(geom: &ScenarioGeometry, x_hat: f64, y_hat: f64, model: CompensationModel) -> Result<Codebook> {
    if !(x_hat.is_finite() && y_hat.is_finite()) {
        return Err(Error::Domain("non-finite UE location".into()));
    }
    let (l_t, l_r) = effective_apertures(geom);
    let limit = l_t.max(l_r) / 2.0;
    if y_hat.is_nan() || y_hat <= limit {
        return Err(Error::Domain(format!(
            "UE range y = {y_hat:.4} m must exceed half the largest aperture ({limit:.4} m)"
        )));
    }
    let k = geom.wavenumber;
    let bs_x = geom.bs_x();
    let ue_x: Vec<f64> = geom.ue_offsets().iter().map(|d| x_hat + d).collect();
    let r_hat = x_hat.hypot(y_hat);

    let (d_t, d_r) = match model {
        CompensationModel::Paraxial => {
            let rel: Vec<f64> = bs_x.iter().map(|x| x - x_hat).collect();
            (
                compensation_phases(&rel, y_hat, k)?,
                compensation_phases(&ue_x, y_hat, k)?,
            )
        }
        CompensationModel::Exact => (
            nalgebra::DVector::from_iterator(
                bs_x.len(),
                bs_x.iter().map(|x| cis(k * ((x - x_hat).hypot(y_hat) - r_hat))),
            ),
            nalgebra::DVector::from_iterator(ue_x.len(), ue_x.iter().map(|x| cis(k * (x.hypot(y_hat) - r_hat)))),
        ),
    };

    let (w_t, w_r) = kernel_frequencies(geom, x_hat, y_hat, model);
    let tx_basis = dpss_sequences(&sinc_kernel(geom.n_t(), w_t)?)?;
    let rx_basis = dpss_sequences(&sinc_kernel(geom.n_r(), w_r)?)?;

    let compensated = |d: &nalgebra::DVector<C64>, v: &DMatrix<f64>| {
        CMatrix::from_fn(v.nrows(), v.ncols(), |i, j| (d[i] * v[(i, j)]).conj())
    };
    let tx = compensated(&d_t, &tx_basis.vectors);
    let rx = compensated(&d_r, &rx_basis.vectors);

    let m_r = rx.ncols();
    let mut pairs: Vec<(usize, usize)> = (0..tx.ncols()).flat_map(|i| (0..m_r).map(move |j| (i, j))).collect();
    let weight = |&(i, j): &(usize, usize)| tx_basis.eigenvalues[i] * rx_basis.eigenvalues[j];
    pairs.sort_by(|a, b| weight(b).total_cmp(&weight(a)));

    let meta = pairs
        .iter()
        .map(|&(i, j)| CodewordMeta::Dpss {
            tx_eigen_index: i,
            rx_eigen_index: j,
            tx_eigenvalue: tx_basis.eigenvalues[i],
            rx_eigenvalue: rx_basis.eigenvalues[j],
        })
        .collect();
    Ok(Codebook::from_factors(
        CodebookKind::Dpss,
        CodebookParams::Location { x_hat, y_hat },
        KroneckerFactors { tx, rx, pairs },
        meta,
    ))
}

/// `|R'_T[0, m]|` summed element by element over the UE array, for the UE
/// centre of `geom`, normalized to its peak.
pub fn paraxial_correlation_row(geom: &ScenarioGeometry) -> Vec<f64> {
    let y = geom.ue_center.y;
    let k = geom.wavenumber;
    let bs_x = geom.bs_x();
    let ue_x: Vec<f64> = geom.ue_offsets().iter().map(|d| geom.ue_center.x + d).collect();
    let row: Vec<f64> = bs_x
        .iter()
        .map(|&xm| {
            ue_x.iter()
                .map(|&xr| cis(k * xr * (xm - bs_x[0]) / y))
                .sum::<C64>()
                .norm()
        })
        .collect();
    let peak = row.iter().cloned().fold(0.0, f64::max);
    row.into_iter().map(|v| v / peak).collect()
}

/// `|S[0, m]|` of the BS-side sinc kernel for the UE centre of `geom`,
/// normalized to its peak.
pub fn kernel_row(geom: &ScenarioGeometry, model: CompensationModel) -> Result<Vec<f64>> {
    let c = geom.ue_center;
    let (w_t, _) = kernel_frequencies(geom, c.x, c.y, model);
    let s = sinc_kernel(geom.n_t(), w_t)?;
    let peak = s.matrix[(0, 0)];
    Ok(s.matrix.row(0).iter().map(|v| v.abs() / peak).collect())
}
