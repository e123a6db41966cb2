use super::dft::grid_count;
use super::{Codebook, CodebookKind, CodebookParams, CodewordMeta, KroneckerFactors};
use crate::error::{Error, Result};
use crate::linalg::{cis, CMatrix, CVector};
use crate::model::{Point, ScenarioGeometry};

pub const DEFAULT_R_MIN: f64 = 1.0;
pub const DEFAULT_R_MAX: f64 = 20.0;

/// One side of the polar-domain grid: angles uniform in `sin(theta)` over
/// `[-1, 1)` and distances uniform in `1/r` over `[1/r_max, 1/r_min]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub sines: Vec<f64>,
    pub distances: Vec<f64>,
}

impl PolarGrid {
    /// Grid points in angle-major order.
    pub fn points(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.sines
            .iter()
            .flat_map(move |&s| self.distances.iter().map(move |&r| (s.asin(), r)))
    }

    pub fn len(&self) -> usize {
        self.sines.len() * self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn polar_grid(count: usize, r_min: f64, r_max: f64) -> Result<PolarGrid> {
    if !(r_min > 0.0 && r_max > r_min && r_max.is_finite()) {
        return Err(Error::Domain(format!(
            "distance range [{r_min}, {r_max}] must satisfy 0 < r_min < r_max"
        )));
    }
    if count == 0 {
        return Err(Error::Domain("empty polar grid".into()));
    }
    let sines = (0..count).map(|a| -1.0 + 2.0 * a as f64 / count as f64).collect();
    let (lo, hi) = (1.0 / r_max, 1.0 / r_min);
    let distances = if count == 1 {
        vec![2.0 / (lo + hi)]
    } else {
        (0..count)
            .map(|b| 1.0 / (lo + (hi - lo) * b as f64 / (count - 1) as f64))
            .collect()
    };
    Ok(PolarGrid { sines, distances })
}

/// Unit-norm response of a ULA with elements at `(offset, 0)` to a point source.
pub fn near_field_steering(offsets: &[f64], source: Point, wavenumber: f64) -> CVector {
    let mut v = CVector::from_iterator(
        offsets.len(),
        offsets.iter().map(|&x| {
            let d = (x - source.x).hypot(source.y);
            cis(-wavenumber * d) / d
        }),
    );
    let n = v.norm();
    v.unscale_mut(n);
    v
}

fn side_matrix(offsets: &[f64], grid: &PolarGrid, wavenumber: f64) -> (CMatrix, Vec<(f64, f64)>) {
    let pts: Vec<(f64, f64)> = grid.points().collect();
    let mut m = CMatrix::zeros(offsets.len(), pts.len());
    for (c, &(theta, r)) in pts.iter().enumerate() {
        m.set_column(
            c,
            &near_field_steering(offsets, Point::from_polar(r, theta), wavenumber),
        );
    }
    (m, pts)
}

/// Polar-domain spherical-wave codebook with `ceil(beta sqrt(N))` angles and
/// distances per side.
///
/// The UE side is sampled in the UE's own frame under the parallel-array
/// assumption. Each codeword is the rank-one `a_T kron a_R`.
pub fn spherical_codebook(geom: &ScenarioGeometry, beta: f64, r_min: f64, r_max: f64) -> Result<Codebook> {
    if !(beta.is_finite() && beta >= 1.0) {
        return Err(Error::Domain(format!("oversampling rate {beta} < 1")));
    }
    let g_t = grid_count(beta, (geom.n_t() as f64).sqrt());
    let g_r = grid_count(beta, (geom.n_r() as f64).sqrt());
    let tx_grid = polar_grid(g_t, r_min, r_max)?;
    let rx_grid = polar_grid(g_r, r_min, r_max)?;
    let (tx, tx_pts) = side_matrix(&geom.bs_x(), &tx_grid, geom.wavenumber);
    let (rx, rx_pts) = side_matrix(&geom.ue_offsets(), &rx_grid, geom.wavenumber);
    let factors = KroneckerFactors::full_product(tx, rx);
    let meta = factors
        .pairs
        .iter()
        .map(|&(i, j)| {
            let (tx_angle, tx_distance) = tx_pts[i];
            let (rx_angle, rx_distance) = rx_pts[j];
            CodewordMeta::Spherical {
                tx_angle,
                tx_distance,
                rx_angle,
                rx_distance,
                ue_center: Point::from_polar(tx_distance, tx_angle),
            }
        })
        .collect();
    Ok(Codebook::from_factors(
        CodebookKind::Spherical,
        CodebookParams::PolarGrid { beta, r_min, r_max },
        factors,
        meta,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dotc, vec_matrix};
    use crate::model::los_channel;

    const FC: f64 = 28e9;

    #[test]
    fn paper_scale_size() {
        let g = ScenarioGeometry::new(192, 4, FC, Point::new(0.0, 5.0), 0.0).unwrap();
        let cb = spherical_codebook(&g, 1.0, DEFAULT_R_MIN, DEFAULT_R_MAX).unwrap();
        // G_T = 14, G_R = 2
        assert_eq!(cb.len(), 14 * 14 * 2 * 2);
        assert_eq!(cb.len(), 784);
    }

    #[test]
    fn grid_is_uniform_in_sine_and_inverse_distance() {
        let g = polar_grid(4, 1.0, 20.0).unwrap();
        assert_eq!(g.sines, vec![-1.0, -0.5, 0.0, 0.5]);
        assert!((g.distances[0] - 20.0).abs() < 1e-12);
        assert!((g.distances[3] - 1.0).abs() < 1e-12);
        let inv: Vec<f64> = g.distances.iter().map(|r| 1.0 / r).collect();
        let step = inv[1] - inv[0];
        assert!(inv.windows(2).all(|w| (w[1] - w[0] - step).abs() < 1e-12));
        assert!(polar_grid(4, 0.0, 20.0).is_err());
        assert!(polar_grid(4, 5.0, 2.0).is_err());
    }

    #[test]
    fn columns_unit_norm() {
        let g = ScenarioGeometry::new(16, 2, FC, Point::new(0.0, 5.0), 0.0).unwrap();
        let cb = spherical_codebook(&g, 1.0, 1.0, 20.0).unwrap();
        for c in cb.matrix().column_iter() {
            assert!((c.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_nonpositive_r_min() {
        let g = ScenarioGeometry::new(16, 2, FC, Point::new(0.0, 5.0), 0.0).unwrap();
        assert!(matches!(spherical_codebook(&g, 1.0, 0.0, 20.0), Err(Error::Domain(_))));
        assert!(spherical_codebook(&g, 1.0, -1.0, 20.0).is_err());
    }

    #[test]
    fn on_grid_codeword_dominates_distant_cells() {
        // Place the UE exactly on a BS-side grid point (and broadside to its
        // own array so the UE-side point is on-grid as well).
        let g0 = ScenarioGeometry::new(16, 1, FC, Point::new(0.0, 5.0), 0.0).unwrap();
        let cb = spherical_codebook(&g0, 1.0, 1.0, 20.0).unwrap();
        let grid = polar_grid(4, 1.0, 20.0).unwrap();
        let (ai, bi) = (2usize, 1usize); // sin = 0.5, second distance
        let p = Point::from_polar(grid.distances[bi], grid.sines[ai].asin());
        let geom = g0.with_ue_center(p).unwrap();
        let h = vec_matrix(&los_channel(&geom));
        let hn = h.unscale(h.norm());
        let corr: Vec<f64> = (0..cb.len())
            .map(|k| dotc(cb.column(k).as_slice(), hn.as_slice()).norm())
            .collect();
        let true_k = ai * grid.distances.len() + bi;
        assert!(corr[true_k] > 0.999);
        for (k, c) in corr.iter().enumerate() {
            let (a, b) = (k / 4, k % 4);
            let cells = (a as i64 - ai as i64).abs().max((b as i64 - bi as i64).abs());
            if cells >= 2 {
                assert!(corr[true_k] > *c, "codeword {k} ({c}) beats on-grid codeword");
            }
        }
    }
}
