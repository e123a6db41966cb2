use std::f64::consts::PI;

use super::{Codebook, CodebookKind, CodebookParams, CodewordMeta, KroneckerFactors};
use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, C64};

/// `ceil(beta * n)`, tolerant of rounding in `beta`.
pub(crate) fn grid_count(beta: f64, n: f64) -> usize {
    ((beta * n - 1e-9).ceil() as usize).max(1)
}

/// Angle grid `theta_i = -pi/2 + i*pi/G`, `i = 1..=G`.
pub fn dft_angles(count: usize) -> Vec<f64> {
    (1..=count).map(|i| -PI / 2.0 + i as f64 * PI / count as f64).collect()
}

/// Far-field steering matrix with columns `[1, e^{j pi sin t}, ...]^H / sqrt(N)`.
pub fn dft_steering_matrix(n: usize, angles: &[f64]) -> CMatrix {
    let scale = 1.0 / (n as f64).sqrt();
    CMatrix::from_fn(n, angles.len(), |k, i| cis(-PI * k as f64 * angles[i].sin()) * scale)
}

/// Oversampled DFT codebook `conj(A_T) kron A_R` with `ceil(beta N)` angles per side.
pub fn dft_codebook(n_t: usize, n_r: usize, beta: f64) -> Result<Codebook> {
    if n_t == 0 || n_r == 0 {
        return Err(Error::Domain("arrays need at least one element".into()));
    }
    if !(beta.is_finite() && beta >= 1.0) {
        return Err(Error::Domain(format!("oversampling rate {beta} < 1")));
    }
    let tx_angles = dft_angles(grid_count(beta, n_t as f64));
    let rx_angles = dft_angles(grid_count(beta, n_r as f64));
    let tx = dft_steering_matrix(n_t, &tx_angles).map(|z: C64| z.conj());
    let rx = dft_steering_matrix(n_r, &rx_angles);
    let factors = KroneckerFactors::full_product(tx, rx);
    let meta = factors
        .pairs
        .iter()
        .map(|&(i, j)| CodewordMeta::Dft {
            tx_angle: tx_angles[i],
            rx_angle: rx_angles[j],
        })
        .collect();
    Ok(Codebook::from_factors(
        CodebookKind::Dft,
        CodebookParams::Oversampling { beta },
        factors,
        meta,
    ))
}
