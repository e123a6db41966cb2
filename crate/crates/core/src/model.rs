//! Array geometry and near-field channel synthesis.
//!
//! The BS is a ULA on the x-axis centred at the origin; the UE is a ULA with
//! the same half-wavelength spacing centred at `ue_center`. Distances are
//! taken directly from element coordinates, with no Fresnel expansion.
//! The normalized scalar response drops the constant `j*kappa*Z0/(4*pi)`.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cis, complex_gaussian, CMatrix, C64};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    /// Point at distance `r` seen at angle `theta` from the array broadside (+y).
    pub fn from_polar(r: f64, theta: f64) -> Self {
        Point::new(r * theta.sin(), r * theta.cos())
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn norm(&self) -> f64 {
        self.x.hypot(self.y)
    }

    /// Angle from broadside, `atan2(x, y)`.
    pub fn angle(&self) -> f64 {
        self.x.atan2(self.y)
    }
}

/// Scenario record a geometry is built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub n_t: usize,
    pub n_r: usize,
    pub carrier_hz: f64,
    pub ue_center_x: f64,
    pub ue_center_y: f64,
    #[serde(default)]
    pub ue_rotation: f64,
    pub k_db: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioGeometry {
    pub wavelength: f64,
    pub wavenumber: f64,
    pub bs_elements: Vec<Point>,
    pub ue_elements: Vec<Point>,
    pub ue_center: Point,
    pub ue_rotation: f64,
}

/// Offsets `(k - (n+1)/2) * spacing` for a centred ULA, k = 1..=n.
pub fn ula_offsets(n: usize, spacing: f64) -> Vec<f64> {
    let mid = (n as f64 + 1.0) / 2.0;
    (1..=n).map(|k| (k as f64 - mid) * spacing).collect()
}

impl ScenarioGeometry {
    pub fn new(n_t: usize, n_r: usize, carrier_hz: f64, ue_center: Point, ue_rotation: f64) -> Result<Self> {
        if n_t == 0 || n_r == 0 {
            return Err(Error::Domain("arrays need at least one element".into()));
        }
        if !(carrier_hz.is_finite() && carrier_hz > 0.0) {
            return Err(Error::Domain(format!("carrier frequency {carrier_hz} Hz")));
        }
        let wavelength = SPEED_OF_LIGHT / carrier_hz;
        Self::with_wavelength(n_t, n_r, wavelength, ue_center, ue_rotation)
    }

    pub fn with_wavelength(
        n_t: usize,
        n_r: usize,
        wavelength: f64,
        ue_center: Point,
        ue_rotation: f64,
    ) -> Result<Self> {
        if n_t == 0 || n_r == 0 {
            return Err(Error::Domain("arrays need at least one element".into()));
        }
        if !(wavelength.is_finite() && wavelength > 0.0) {
            return Err(Error::Domain(format!("wavelength {wavelength} m")));
        }
        if !(ue_center.y > 0.0 && ue_center.x.is_finite() && ue_center.y.is_finite()) {
            return Err(Error::Domain(format!(
                "UE centre must lie in front of the BS array (y > 0), got ({}, {})",
                ue_center.x, ue_center.y
            )));
        }
        let spacing = wavelength / 2.0;
        let bs_elements = ula_offsets(n_t, spacing)
            .into_iter()
            .map(|x| Point::new(x, 0.0))
            .collect();
        let (s, c) = ue_rotation.sin_cos();
        let ue_elements: Vec<Point> = ula_offsets(n_r, spacing)
            .into_iter()
            .map(|d| Point::new(ue_center.x + d * c, ue_center.y + d * s))
            .collect();
        if ue_elements.iter().any(|p| p.y <= 0.0) {
            return Err(Error::Domain("rotated UE array crosses the BS axis (y <= 0)".into()));
        }
        Ok(ScenarioGeometry {
            wavelength,
            wavenumber: 2.0 * PI / wavelength,
            bs_elements,
            ue_elements,
            ue_center,
            ue_rotation,
        })
    }

    pub fn from_record(rec: &ScenarioRecord) -> Result<Self> {
        Self::new(
            rec.n_t,
            rec.n_r,
            rec.carrier_hz,
            Point::new(rec.ue_center_x, rec.ue_center_y),
            rec.ue_rotation,
        )
    }

    /// Same arrays with the UE moved to `center`.
    pub fn with_ue_center(&self, center: Point) -> Result<Self> {
        Self::with_wavelength(self.n_t(), self.n_r(), self.wavelength, center, self.ue_rotation)
    }

    pub fn n_t(&self) -> usize {
        self.bs_elements.len()
    }

    pub fn n_r(&self) -> usize {
        self.ue_elements.len()
    }

    /// `L_T = (N_T - 1) * lambda / 2`.
    pub fn bs_aperture(&self) -> f64 {
        (self.n_t() as f64 - 1.0) * self.wavelength / 2.0
    }

    /// `L_R = (N_R - 1) * lambda / 2`.
    pub fn ue_aperture(&self) -> f64 {
        (self.n_r() as f64 - 1.0) * self.wavelength / 2.0
    }

    pub fn bs_x(&self) -> Vec<f64> {
        self.bs_elements.iter().map(|p| p.x).collect()
    }

    /// UE element offsets along the array axis, relative to the UE centre.
    pub fn ue_offsets(&self) -> Vec<f64> {
        ula_offsets(self.n_r(), self.wavelength / 2.0)
    }
}

/// Normalized scalar response `exp(-j kappa |r|) / |r|`, `r = p_r - p_t`.
pub fn scalar_impulse_response(p_t: Point, p_r: Point, wavenumber: f64) -> Result<C64> {
    let d = p_t.distance(&p_r);
    if d == 0.0 {
        return Err(Error::Domain("coincident transmit and receive points".into()));
    }
    Ok(cis(-wavenumber * d) / d)
}

#[inline]
fn response_unchecked(p_t: &Point, p_r: &Point, wavenumber: f64) -> C64 {
    let d = p_t.distance(p_r);
    cis(-wavenumber * d) / d
}

/// LoS matrix, `H[n, m] = g(r_T^(m), r_R^(n))`.
pub fn los_channel(geom: &ScenarioGeometry) -> CMatrix {
    let k = geom.wavenumber;
    CMatrix::from_fn(geom.n_r(), geom.n_t(), |n, m| {
        response_unchecked(&geom.bs_elements[m], &geom.ue_elements[n], k)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub h_full: CMatrix,
    pub h_los: CMatrix,
    pub h_nlos: CMatrix,
    /// Linear Rician factor; `f64::INFINITY` for a pure LoS channel.
    pub rician_k: f64,
}

impl ChannelRealization {
    pub fn n_r(&self) -> usize {
        self.h_full.nrows()
    }

    pub fn n_t(&self) -> usize {
        self.h_full.ncols()
    }
}

/// Mixing weights `(sqrt(K/(1+K)), sqrt(1/(1+K)))`, exact at both limits.
pub fn rician_weights(k_linear: f64) -> (f64, f64) {
    if k_linear.is_infinite() {
        (1.0, 0.0)
    } else if k_linear == 0.0 {
        (0.0, 1.0)
    } else {
        ((k_linear / (1.0 + k_linear)).sqrt(), (1.0 / (1.0 + k_linear)).sqrt())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    if db == f64::INFINITY {
        f64::INFINITY
    } else {
        10f64.powf(db / 10.0)
    }
}

/// Rician composite of the LoS matrix and an i.i.d. `CN(0, 1/(N_T N_R))` NLoS draw.
///
/// `k_db = +inf` yields the LoS channel and `k_db = -inf` the Rayleigh one.
pub fn rician_channel(geom: &ScenarioGeometry, k_db: f64, rng_seed: u64) -> Result<ChannelRealization> {
    if k_db.is_nan() {
        return Err(Error::Domain("Rician factor is NaN".into()));
    }
    let k_linear = db_to_linear(k_db);
    let h_los = los_channel(geom);
    let (n_r, n_t) = h_los.shape();
    let var = 1.0 / (n_t * n_r) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let h_nlos = CMatrix::from_fn(n_r, n_t, |_, _| complex_gaussian(&mut rng, var));
    let (a, b) = rician_weights(k_linear);
    let h_full = h_los.zip_map(&h_nlos, |l, s| l * a + s * b);
    Ok(ChannelRealization {
        h_full,
        h_los,
        h_nlos,
        rician_k: k_linear,
    })
}
