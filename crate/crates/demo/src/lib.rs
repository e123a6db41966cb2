//! Browser bindings for the codebook explorer in `www/index.html`.
//!
//! Each exported function has a plain Rust twin returning `Result<_, String>`
//! so the logic is testable on the host.

use nearfield_core::codebooks::{
    dft_codebook, dpss_codebook, kernel_row, paraxial_correlation_row, spherical_codebook, Codebook, CompensationModel,
    DEFAULT_R_MAX, DEFAULT_R_MIN,
};
use nearfield_core::model::{rician_channel, Point, ScenarioGeometry};
use nearfield_core::pipeline::{gram_map, sparsification_profile};
use wasm_bindgen::prelude::*;

const CARRIER_HZ: f64 = 28e9;

fn geometry(n_t: usize, n_r: usize, distance_m: f64, angle_deg: f64) -> Result<ScenarioGeometry, String> {
    let center = Point::from_polar(distance_m, angle_deg.to_radians());
    ScenarioGeometry::new(n_t, n_r, CARRIER_HZ, center, 0.0).map_err(|e| e.to_string())
}

fn codebook(kind: &str, geom: &ScenarioGeometry) -> Result<Codebook, String> {
    let c = geom.ue_center;
    match kind {
        "dft" => dft_codebook(geom.n_t(), geom.n_r(), 1.0),
        "spherical" => spherical_codebook(geom, 1.0, DEFAULT_R_MIN, DEFAULT_R_MAX),
        "dpss" => dpss_codebook(geom, c.x, c.y, CompensationModel::Exact),
        other => return Err(format!("unknown codebook '{other}'")),
    }
    .map_err(|e| e.to_string())
}

/// Cumulative energy fraction of the sorted coefficients of one Rician channel.
pub fn cumulative_energy_curve(
    kind: &str,
    n_t: usize,
    n_r: usize,
    distance_m: f64,
    angle_deg: f64,
    k_db: f64,
    seed: u64,
) -> Result<Vec<f64>, String> {
    let geom = geometry(n_t, n_r, distance_m, angle_deg)?;
    let h = rician_channel(&geom, k_db, seed).map_err(|e| e.to_string())?;
    let cb = codebook(kind, &geom)?;
    let p = sparsification_profile(&h, &cb).map_err(|e| e.to_string())?;
    Ok(p.cumulative_energy)
}

/// Row-major `|Psi^H Psi|`, `M x M`.
pub fn gram_values(kind: &str, n_t: usize, n_r: usize, distance_m: f64, angle_deg: f64) -> Result<Vec<f64>, String> {
    let geom = geometry(n_t, n_r, distance_m, angle_deg)?;
    let g = gram_map(&codebook(kind, &geom)?);
    Ok(g.transpose().as_slice().to_vec())
}

/// Normalized correlation row by direct summation followed by the sinc
/// kernel row, both of length `n_t`.
pub fn kernel_versus_sum(n_t: usize, n_r: usize, distance_m: f64) -> Result<Vec<f64>, String> {
    let geom = geometry(n_t, n_r, distance_m, 0.0)?;
    let mut out = paraxial_correlation_row(&geom);
    out.extend(kernel_row(&geom, CompensationModel::Paraxial).map_err(|e| e.to_string())?);
    Ok(out)
}

#[wasm_bindgen]
pub fn cumulative_energy(
    kind: &str,
    n_t: usize,
    n_r: usize,
    distance_m: f64,
    angle_deg: f64,
    k_db: f64,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    cumulative_energy_curve(kind, n_t, n_r, distance_m, angle_deg, k_db, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn gram(kind: &str, n_t: usize, n_r: usize, distance_m: f64, angle_deg: f64) -> Result<Vec<f64>, JsError> {
    gram_values(kind, n_t, n_r, distance_m, angle_deg).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn kernel_comparison(n_t: usize, n_r: usize, distance_m: f64) -> Result<Vec<f64>, JsError> {
    kernel_versus_sum(n_t, n_r, distance_m).map_err(|e| JsError::new(&e))
}
