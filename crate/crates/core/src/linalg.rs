//! Small dense linear-algebra helpers shared by the codebook, sensing and
//! pipeline modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);

/// `exp(j * phase)`.
#[inline]
pub fn cis(phase: f64) -> C64 {
    C64::from_polar(1.0, phase)
}

/// Column-major vectorization, `vec(H)[m * rows + n] = H[n, m]`.
pub fn vec_matrix(h: &CMatrix) -> CVector {
    CVector::from_column_slice(h.as_slice())
}

/// Inverse of [`vec_matrix`].
pub fn unvec(v: &CVector, rows: usize, cols: usize) -> Option<CMatrix> {
    (v.len() == rows * cols).then(|| CMatrix::from_column_slice(rows, cols, v.as_slice()))
}

pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.kronecker(b)
}

/// Circularly-symmetric complex Gaussian sample with total variance `var`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, var: f64) -> C64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re * s, im * s)
}

pub fn frobenius_sq(h: &CMatrix) -> f64 {
    h.iter().map(|z| z.norm_sqr()).sum()
}

pub fn norm_sq(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

/// `sum_k conj(a_k) * b_k`.
#[inline]
pub fn dotc(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).fold(ZERO, |acc, (x, y)| acc + x.conj() * y)
}

/// Scale every column of `m` to unit Euclidean norm. Zero columns and columns
/// already within 1e-14 of unit norm are left as is.
pub fn normalize_columns(m: &mut CMatrix) {
    for mut col in m.column_iter_mut() {
        let n = col.norm();
        if n > 0.0 && (n - 1.0).abs() > 1e-14 {
            col /= C64::new(n, 0.0);
        }
    }
}

/// Moore-Penrose pseudo-inverse via SVD with the usual relative cutoff.
pub fn pinv(m: &CMatrix) -> Option<CMatrix> {
    let (rows, cols) = m.shape();
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let tol = smax * (rows.max(cols) as f64) * f64::EPSILON;
    svd.pseudo_inverse(tol).ok()
}
